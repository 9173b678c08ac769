#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep. Nodes whose
// inputs are all constants carry no backward closure and cost nothing during
// the sweep. Every value is a double-precision Eigen matrix; scalars are 1x1.

#include <Eigen/Core>

#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace ski::ad {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Mat& value() const;
  /// Accumulated gradient after Tape::backward; empty if none reached it.
  const Mat& grad() const;
  bool requires_grad() const;
  double scalar() const;

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Mat& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  Var variable(Mat value);

  /// Records an op result. The node requires a gradient iff any parent does;
  /// otherwise `fn` is dropped.
  Var record(Mat value, std::span<const Var> parents, BackwardFn fn);

  /// Seeds d(root)/d(root) = 1 and sweeps backwards. Root must be 1x1.
  void backward(const Var& root);

  bool needs(const Var& v) const { return nodes_[v.id()].requires_grad; }

  template <typename Derived>
  void accumulate(const Var& v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Adds a 1xN row to every row of an MxN matrix.
Var add_row(const Var& a, const Var& row);
Var tanh(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
/// Mean over consecutive row groups: output row k averages `lengths[k]` rows.
Var segment_mean(const Var& a, std::span<const int> lengths);

// Row-wise transforms.
/// Each row scaled to unit L2 norm. Throws DegenerateInput on a zero row.
Var normalize_rows(const Var& a);
/// Each row shifted to zero mean and scaled by 1/sqrt(variance + eps).
Var standardize_rows(const Var& a, double eps = 1e-5);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
/// Row i normalized over columns 0..i only; entries above the diagonal are 0.
Var causal_softmax_rows(const Var& a);

/// Mean of -logp(i, targets[i]) over rows with mask[i] set.
Var masked_nll(const Var& logp, std::span<const int> targets,
               std::span<const char> mask);

// Structural.
Var gather_rows(const Var& table, std::span<const int> indices);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
/// Same value, no gradient flows through.
Var stop_gradient(const Var& a);

}  // namespace ski::ad
