#pragma once

// Central finite differences against the tape's analytic gradients.

#include "ski/autodiff.hpp"
#include "ski/params.hpp"
#include "ski/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace ski::testing {

using Mat = Eigen::MatrixXd;
using Builder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

inline constexpr double kFdStep = 1e-5;
// Gradients smaller than this are compared in absolute terms.
inline constexpr double kRelFloor = 1e-6;

struct GradCheck {
  int coordinates = 0;
  double max_rel_error = 0.0;
};

inline double evaluate(const Builder& f, const std::vector<Mat>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const Mat& m : inputs) leaves.push_back(tape.constant(m));
  return f(tape, leaves).scalar();
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
}

/// Checks `per_input` random coordinates of each input whose index is in
/// `check` (all inputs when empty).
inline GradCheck check_gradients(const Builder& f, std::vector<Mat> inputs, int per_input,
                                 std::uint64_t seed, std::vector<int> check = {}) {
  if (check.empty()) {
    for (int i = 0; i < static_cast<int>(inputs.size()); ++i) check.push_back(i);
  }
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (int i = 0; i < static_cast<int>(inputs.size()); ++i) {
    const bool want = std::find(check.begin(), check.end(), i) != check.end();
    leaves.push_back(want ? tape.variable(inputs[static_cast<std::size_t>(i)])
                          : tape.constant(inputs[static_cast<std::size_t>(i)]));
  }
  tape.backward(f(tape, leaves));

  GradCheck out;
  Rng rng(seed);
  for (int i : check) {
    const auto k = static_cast<std::size_t>(i);
    const Mat grad = leaves[k].grad().size() ? leaves[k].grad() : Mat::Zero(inputs[k].rows(), inputs[k].cols());
    for (int n = 0; n < per_input; ++n) {
      const auto idx = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(inputs[k].size())));
      const double saved = inputs[k](idx);
      inputs[k](idx) = saved + kFdStep;
      const double up = evaluate(f, inputs);
      inputs[k](idx) = saved - kFdStep;
      const double down = evaluate(f, inputs);
      inputs[k](idx) = saved;
      const double numeric = (up - down) / (2.0 * kFdStep);
      out.max_rel_error = std::max(out.max_rel_error, relative_error(grad(idx), numeric));
      ++out.coordinates;
    }
  }
  return out;
}

/// Parameter arrays as gradient-check inputs; rebuilds BoundParams from
/// the leaves so encoder code sees them as its own parameters.
inline std::vector<Mat> values_of(const ParameterSet& params) {
  std::vector<Mat> out;
  for (const Parameter& p : params.items()) out.push_back(p.value);
  return out;
}

inline BoundParams as_bound(const std::vector<ad::Var>& leaves, std::size_t first, std::size_t count) {
  BoundParams b;
  b.vars.assign(leaves.begin() + static_cast<std::ptrdiff_t>(first),
                leaves.begin() + static_cast<std::ptrdiff_t>(first + count));
  return b;
}

inline Mat random_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = scale * rng.normal();
  return m;
}

inline Mat random_unit_rows(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m = random_mat(rng, rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r).normalize();
  return m;
}

}  // namespace ski::testing
