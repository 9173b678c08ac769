#include "ski/core.hpp"

#include "ski/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ski {

void SkeletonSequence::validate() const {
  if (frames.rows() < 1) throw ContractViolation("skeleton: needs at least one frame");
  if (joints < 2) throw ContractViolation("skeleton: needs at least two joints");
  if (frames.cols() != 3 * joints) {
    throw DimensionMismatch("skeleton: expected " + std::to_string(3 * joints) +
                            " columns, got " + std::to_string(frames.cols()));
  }
  if (!frames.allFinite()) throw ContractViolation("skeleton: non-finite coordinate");
}

void VideoClip::validate() const {
  if (frames.rows() < 1) throw ContractViolation("video: needs at least one frame");
  if (frames.cols() != pixels_per_frame()) {
    throw DimensionMismatch("video: expected " + std::to_string(pixels_per_frame()) +
                            " values per frame, got " + std::to_string(frames.cols()));
  }
  if (frames.size() > 0 && (frames.minCoeff() < 0.0 || frames.maxCoeff() > 1.0)) {
    throw ContractViolation("video: pixel values outside [0, 1]");
  }
}

Embedding Embedding::unit(Vec values) {
  const double n = values.norm();
  if (!(std::abs(n - 1.0) <= kUnitNormTolerance)) {
    throw ContractViolation("embedding: norm " + std::to_string(n) + " is not 1");
  }
  return Embedding(std::move(values), true);
}

Embedding l2_normalize(const Vec& v) {
  if (!v.allFinite()) throw DegenerateInput("l2_normalize: non-finite input");
  const double n = v.norm();
  if (!(n > 0.0)) throw DegenerateInput("l2_normalize: zero vector");
  return Embedding::unit(v / n);
}

Mat l2_normalize_rows(const Mat& rows) {
  Mat out(rows.rows(), rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    out.row(i) = l2_normalize(rows.row(i).transpose()).values().transpose();
  }
  return out;
}

bool rows_normalized(const Mat& rows) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    if (!(std::abs(rows.row(i).norm() - 1.0) <= kUnitNormTolerance)) return false;
  }
  return true;
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
  if (!a.normalized() || !b.normalized()) {
    throw ContractViolation("cosine_similarity: inputs must be normalized");
  }
  if (a.dim() != b.dim()) throw DimensionMismatch("cosine_similarity: dimensions differ");
  return std::clamp(a.values().dot(b.values()), -1.0, 1.0);
}

LogitMatrix similarity_matrix(const Mat& samples, const Mat& classes, std::vector<int> row_ids,
                              std::vector<int> col_ids) {
  if (samples.cols() != classes.cols()) {
    throw DimensionMismatch("similarity_matrix: embedding dimension " +
                            std::to_string(samples.cols()) + " vs " +
                            std::to_string(classes.cols()));
  }
  if (samples.rows() < 1 || classes.rows() < 1) {
    throw DegenerateInput("similarity_matrix: empty batch");
  }
  if (!rows_normalized(samples) || !rows_normalized(classes)) {
    throw ContractViolation("similarity_matrix: rows must be normalized");
  }
  if (row_ids.empty()) {
    row_ids.resize(static_cast<std::size_t>(samples.rows()));
    std::iota(row_ids.begin(), row_ids.end(), 0);
  }
  if (col_ids.empty()) {
    col_ids.resize(static_cast<std::size_t>(classes.rows()));
    std::iota(col_ids.begin(), col_ids.end(), 0);
  }
  if (static_cast<Eigen::Index>(row_ids.size()) != samples.rows() ||
      static_cast<Eigen::Index>(col_ids.size()) != classes.rows()) {
    throw DimensionMismatch("similarity_matrix: id list length mismatch");
  }
  Mat values = (samples * classes.transpose()).cwiseMax(-1.0).cwiseMin(1.0);
  return LogitMatrix{std::move(values), std::move(row_ids), std::move(col_ids)};
}

Vec temporal_mean_pool(const Mat& features) {
  if (features.rows() < 1) throw DegenerateInput("temporal_mean_pool: no frames");
  return features.colwise().sum().transpose() / static_cast<double>(features.rows());
}

Vec softmax(const Vec& logits, double temperature) {
  if (!(temperature > 0.0)) throw ContractViolation("softmax: temperature must be positive");
  if (logits.size() == 0) throw DegenerateInput("softmax: empty input");
  if (!logits.allFinite()) throw ContractViolation("softmax: non-finite logits");
  const Vec scaled = logits / temperature;
  const double m = scaled.maxCoeff();
  Vec e = (scaled.array() - m).exp().matrix();
  return e / e.sum();
}

}  // namespace ski
