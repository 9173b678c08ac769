#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace ski {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Tolerance on ||v|| - 1 for a vector to count as normalized.
inline constexpr double kUnitNormTolerance = 1e-6;

/// T_s frames of J 3D joints. Row t holds frame t; joint j occupies
/// columns 3j..3j+2 as (x, y, z) in meters, camera coordinates.
struct SkeletonSequence {
  Mat frames;
  int joints = 0;
  int subject_id = 0;
  int class_id = 0;

  int length() const { return static_cast<int>(frames.rows()); }
  Eigen::Vector3d joint(int t, int j) const {
    return frames.row(t).segment<3>(3 * j).transpose();
  }
  void validate() const;
};

/// T_v frames of a C x H x W image, intensities in [0, 1]. Row t holds
/// frame t flattened channel-major: index c*H*W + y*W + x.
struct VideoClip {
  Mat frames;
  int channels = 3;
  int height = 0;
  int width = 0;
  int class_id = 0;

  int length() const { return static_cast<int>(frames.rows()); }
  int pixels_per_frame() const { return channels * height * width; }
  double pixel(int t, int c, int y, int x) const {
    return frames(t, (c * height + y) * width + x);
  }
  void validate() const;
};

struct TextPrompt {
  std::string text;
  int class_id = 0;
  std::string template_id;
};

/// A D-dimensional vector in the shared semantic space.
class Embedding {
 public:
  Embedding() = default;

  /// Wraps an arbitrary vector; normalized() is false.
  static Embedding raw(Vec values) { return Embedding(std::move(values), false); }
  /// Wraps a vector that must already have unit norm (checked).
  static Embedding unit(Vec values);

  const Vec& values() const { return values_; }
  bool normalized() const { return normalized_; }
  Eigen::Index dim() const { return values_.size(); }

 private:
  Embedding(Vec values, bool normalized) : values_(std::move(values)), normalized_(normalized) {}

  Vec values_;
  bool normalized_ = false;
};

/// B x C similarities between sample embeddings (rows) and class-text
/// embeddings (columns).
struct LogitMatrix {
  Mat values;
  std::vector<int> row_ids;
  std::vector<int> col_ids;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// Throws DegenerateInput for a zero or non-finite vector.
Embedding l2_normalize(const Vec& v);

/// Row-wise l2_normalize of a batch.
Mat l2_normalize_rows(const Mat& rows);

/// Throws ContractViolation unless both inputs are normalized.
double cosine_similarity(const Embedding& a, const Embedding& b);

/// Entry (i, j) = cos(Z_i, T_j). Rows of both inputs must be unit norm.
/// Ids default to 0..B-1 and 0..C-1 when empty.
LogitMatrix similarity_matrix(const Mat& samples, const Mat& classes,
                              std::vector<int> row_ids = {}, std::vector<int> col_ids = {});

/// Arithmetic mean over rows (time axis).
Vec temporal_mean_pool(const Mat& features);

/// Temperature-scaled softmax, stabilized by max subtraction.
Vec softmax(const Vec& logits, double temperature);

/// True when every row has unit norm within kUnitNormTolerance.
bool rows_normalized(const Mat& rows);

}  // namespace ski
