#include "ski/autodiff.hpp"

#include "ski/error.hpp"

#include <cmath>
#include <string>

namespace ski::ad {

const Mat& Var::value() const { return tape_->value(id_); }
const Mat& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::scalar() const {
  const Mat& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionMismatch("scalar() on a " + std::to_string(v.rows()) + "x" +
                            std::to_string(v.cols()) + " value");
  }
  return v(0, 0);
}

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), false, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), true, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Mat value, std::span<const Var> parents, BackwardFn fn) {
  bool any = false;
  for (const Var& p : parents) any = any || nodes_[p.id()].requires_grad;
  nodes_.push_back(Node{std::move(value), Mat(), any, any ? std::move(fn) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& root) {
  Node& r = nodes_[root.id()];
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw DimensionMismatch("backward() needs a scalar root");
  }
  if (!r.requires_grad) return;
  r.grad = Mat::Ones(1, 1);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionMismatch(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " and " + std::to_string(b.rows()) +
                            "x" + std::to_string(b.cols()));
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
  Tape& t = a.tape();
  const Var ps[] = {a, b};
  return t.record(a.value() * b.value(), ps, [a, b](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw DimensionMismatch("matmul_nt: inner dimensions differ");
  Tape& t = a.tape();
  const Var ps[] = {a, b};
  return t.record(a.value() * b.value().transpose(), ps, [a, b](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accumulate(a, g * b.value());
    if (t.needs(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var transpose(const Var& a) {
  const Var ps[] = {a};
  return a.tape().record(a.value().transpose(), ps,
                         [a](Tape& t, const Mat& g) { t.accumulate(a, g.transpose()); });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  const Var ps[] = {a, b};
  return a.tape().record(a.value() + b.value(), ps, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  const Var ps[] = {a, b};
  return a.tape().record(a.value() - b.value(), ps, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    if (t.needs(b)) t.accumulate(b, -g);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a, b, "hadamard");
  const Var ps[] = {a, b};
  return a.tape().record(a.value().cwiseProduct(b.value()), ps, [a, b](Tape& t, const Mat& g) {
    if (t.needs(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double s) {
  const Var ps[] = {a};
  return a.tape().record(a.value() * s, ps,
                         [a, s](Tape& t, const Mat& g) { t.accumulate(a, g * s); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionMismatch("add_row: row must be 1x" + std::to_string(a.cols()));
  }
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  const Var ps[] = {a, row};
  return a.tape().record(std::move(out), ps, [a, row](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    if (t.needs(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var tanh(const Var& a) {
  Mat y = a.value().array().tanh().matrix();
  const Var ps[] = {a};
  if (!a.requires_grad()) return a.tape().record(std::move(y), ps, nullptr);
  return a.tape().record(y, ps, [a, y](Tape& t, const Mat& g) {
    t.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var exp(const Var& a) {
  const Var ps[] = {a};
  return a.tape().record(a.value().array().exp().matrix(), ps, [a](Tape& t, const Mat& g) {
    t.accumulate(a, (g.array() * a.value().array().exp()).matrix());
  });
}

Var square(const Var& a) {
  const Var ps[] = {a};
  return a.tape().record(a.value().array().square().matrix(), ps, [a](Tape& t, const Mat& g) {
    t.accumulate(a, (2.0 * g.array() * a.value().array()).matrix());
  });
}

Var sum(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  const Var ps[] = {a};
  return a.tape().record(std::move(out), ps, [a](Tape& t, const Mat& g) {
    t.accumulate(a, Mat::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw DegenerateInput("mean of an empty matrix");
  const double n = static_cast<double>(a.value().size());
  Mat out(1, 1);
  out(0, 0) = a.value().sum() / n;
  const Var ps[] = {a};
  return a.tape().record(std::move(out), ps, [a, n](Tape& t, const Mat& g) {
    t.accumulate(a, Mat::Constant(a.rows(), a.cols(), g(0, 0) / n));
  });
}

Var segment_mean(const Var& a, std::span<const int> lengths) {
  std::vector<int> lens(lengths.begin(), lengths.end());
  Eigen::Index total = 0;
  for (int len : lens) {
    if (len <= 0) throw DegenerateInput("segment_mean: empty segment");
    total += len;
  }
  if (total != a.rows()) throw DimensionMismatch("segment_mean: lengths do not cover rows");
  Mat out(static_cast<Eigen::Index>(lens.size()), a.cols());
  Eigen::Index start = 0;
  for (std::size_t k = 0; k < lens.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) =
        a.value().middleRows(start, lens[k]).colwise().sum() / static_cast<double>(lens[k]);
    start += lens[k];
  }
  const Var ps[] = {a};
  return a.tape().record(std::move(out), ps, [a, lens](Tape& t, const Mat& g) {
    Mat ga(a.rows(), a.cols());
    Eigen::Index s = 0;
    for (std::size_t k = 0; k < lens.size(); ++k) {
      const RowVec r = g.row(static_cast<Eigen::Index>(k)) / static_cast<double>(lens[k]);
      for (int i = 0; i < lens[k]; ++i) ga.row(s + i) = r;
      s += lens[k];
    }
    t.accumulate(a, ga);
  });
}

Var normalize_rows(const Var& a) {
  const Mat& x = a.value();
  Eigen::VectorXd norms = x.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0) || !std::isfinite(norms(i))) {
      throw DegenerateInput("normalize_rows: row " + std::to_string(i) +
                            " has zero or non-finite norm");
    }
  }
  Mat y = norms.cwiseInverse().asDiagonal() * x;
  const Var ps[] = {a};
  return a.tape().record(y, ps, [a, y, norms](Tape& t, const Mat& g) {
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Mat ga = g - dots.asDiagonal() * y;
    t.accumulate(a, norms.cwiseInverse().asDiagonal() * ga);
  });
}

Var standardize_rows(const Var& a, double eps) {
  const Mat& x = a.value();
  const auto n = static_cast<double>(x.cols());
  const Eigen::VectorXd mu = x.rowwise().mean();
  const Mat centered = x - mu.replicate(1, x.cols());
  const Eigen::VectorXd inv_sd =
      ((centered.array().square().rowwise().sum() / n) + eps).sqrt().inverse().matrix();
  Mat y = inv_sd.asDiagonal() * centered;
  const Var ps[] = {a};
  return a.tape().record(y, ps, [a, y, inv_sd, n](Tape& t, const Mat& g) {
    const Eigen::VectorXd g_mean = g.rowwise().sum() / n;
    const Eigen::VectorXd gy_mean = g.cwiseProduct(y).rowwise().sum() / n;
    Mat ga = g - g_mean.replicate(1, g.cols()) - gy_mean.asDiagonal() * y;
    t.accumulate(a, inv_sd.asDiagonal() * ga);
  });
}

namespace {

Mat softmax_value(const Mat& x) {
  Mat y = x;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double m = y.row(i).maxCoeff();
    y.row(i) = (y.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

}  // namespace

Var softmax_rows(const Var& a) {
  Mat y = softmax_value(a.value());
  const Var ps[] = {a};
  return a.tape().record(y, ps, [a, y](Tape& t, const Mat& g) {
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Mat ga = y.cwiseProduct(g - dots.replicate(1, g.cols()));
    t.accumulate(a, ga);
  });
}

Var log_softmax_rows(const Var& a) {
  const Mat& x = a.value();
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    y.row(i) = x.row(i).array() - lse;
  }
  const Var ps[] = {a};
  return a.tape().record(y, ps, [a, y](Tape& t, const Mat& g) {
    const Eigen::VectorXd gsum = g.rowwise().sum();
    Mat ga = g - y.array().exp().matrix().cwiseProduct(gsum.replicate(1, g.cols()));
    t.accumulate(a, ga);
  });
}

Var causal_softmax_rows(const Var& a) {
  const Mat& x = a.value();
  if (x.rows() > x.cols()) throw DimensionMismatch("causal_softmax_rows: more rows than cols");
  Mat y = Mat::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto head = x.row(i).head(i + 1);
    const double m = head.maxCoeff();
    const Eigen::RowVectorXd e = (head.array() - m).exp().matrix();
    y.row(i).head(i + 1) = e / e.sum();
  }
  const Var ps[] = {a};
  return a.tape().record(y, ps, [a, y](Tape& t, const Mat& g) {
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Mat ga = y.cwiseProduct(g - dots.replicate(1, g.cols()));
    t.accumulate(a, ga);
  });
}

Var masked_nll(const Var& logp, std::span<const int> targets, std::span<const char> mask) {
  if (static_cast<Eigen::Index>(targets.size()) != logp.rows() ||
      static_cast<Eigen::Index>(mask.size()) != logp.rows()) {
    throw DimensionMismatch("masked_nll: targets/mask length must equal rows");
  }
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<char> mk(mask.begin(), mask.end());
  double total = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < tg.size(); ++i) {
    if (!mk[i]) continue;
    if (tg[i] < 0 || tg[i] >= logp.cols()) {
      throw ContractViolation("masked_nll: target index " + std::to_string(tg[i]) +
                              " out of range");
    }
    total -= logp.value()(static_cast<Eigen::Index>(i), tg[i]);
    ++count;
  }
  if (count == 0) throw DegenerateInput("masked_nll: empty mask");
  Mat out(1, 1);
  out(0, 0) = total / count;
  const Var ps[] = {logp};
  return logp.tape().record(std::move(out), ps, [logp, tg, mk, count](Tape& t, const Mat& g) {
    Mat ga = Mat::Zero(logp.rows(), logp.cols());
    for (std::size_t i = 0; i < tg.size(); ++i) {
      if (mk[i]) ga(static_cast<Eigen::Index>(i), tg[i]) -= g(0, 0) / count;
    }
    t.accumulate(logp, ga);
  });
}

Var gather_rows(const Var& table, std::span<const int> indices) {
  std::vector<int> idx(indices.begin(), indices.end());
  Mat out(static_cast<Eigen::Index>(idx.size()), table.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= table.rows()) {
      throw ContractViolation("gather_rows: index " + std::to_string(idx[k]) + " out of range");
    }
    out.row(static_cast<Eigen::Index>(k)) = table.value().row(idx[k]);
  }
  const Var ps[] = {table};
  return table.tape().record(std::move(out), ps, [table, idx](Tape& t, const Mat& g) {
    Mat gt = Mat::Zero(table.rows(), table.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      gt.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
    }
    t.accumulate(table, gt);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DegenerateInput("concat_rows: no parts");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const Var& p : parts) {
    if (p.cols() != cols) throw DimensionMismatch("concat_rows: column counts differ");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts.front().tape().record(std::move(out), ps, [ps](Tape& t, const Mat& g) {
    Eigen::Index s = 0;
    for (const Var& p : ps) {
      if (t.needs(p)) t.accumulate(p, g.middleRows(s, p.rows()));
      s += p.rows();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DegenerateInput("concat_cols: no parts");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionMismatch("concat_cols: row counts differ");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts.front().tape().record(std::move(out), ps, [ps](Tape& t, const Mat& g) {
    Eigen::Index s = 0;
    for (const Var& p : ps) {
      if (t.needs(p)) t.accumulate(p, g.middleCols(s, p.cols()));
      s += p.cols();
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw DimensionMismatch("slice_rows: range out of bounds");
  }
  const Var ps[] = {a};
  return a.tape().record(a.value().middleRows(start, count), ps,
                         [a, start, count](Tape& t, const Mat& g) {
                           Mat ga = Mat::Zero(a.rows(), a.cols());
                           ga.middleRows(start, count) = g;
                           t.accumulate(a, ga);
                         });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionMismatch("slice_cols: range out of bounds");
  }
  const Var ps[] = {a};
  return a.tape().record(a.value().middleCols(start, count), ps,
                         [a, start, count](Tape& t, const Mat& g) {
                           Mat ga = Mat::Zero(a.rows(), a.cols());
                           ga.middleCols(start, count) = g;
                           t.accumulate(a, ga);
                         });
}

Var stop_gradient(const Var& a) { return a.tape().constant(a.value()); }

}  // namespace ski::ad
