#include "ski/autodiff.hpp"
#include "ski/error.hpp"

#include "gradcheck.hpp"

#include <doctest.h>

#include <vector>

using namespace ski;
using ski::testing::Builder;
using ski::testing::check_gradients;
using ski::testing::random_mat;

namespace {

// Reduces any matrix to a scalar with fixed random weights so every entry
// of the output matters.
ad::Var probe(const ad::Var& x, std::uint64_t seed = 99) {
  Rng rng(seed);
  const Mat w = random_mat(rng, x.rows(), x.cols());
  return ad::sum(ad::hadamard(x, x.tape().constant(w)));
}

void expect_tight(const Builder& f, std::vector<Mat> inputs, std::uint64_t seed = 1) {
  const auto r = check_gradients(f, std::move(inputs), 12, seed);
  CHECK(r.max_rel_error < 1e-6);
}

}  // namespace

TEST_CASE("elementwise and linear ops match finite differences") {
  Rng rng(1);
  const Mat a = random_mat(rng, 3, 4), b = random_mat(rng, 3, 4), c = random_mat(rng, 4, 2);
  const Mat row = random_mat(rng, 1, 4);

  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::matmul(v[0], v[1])); }, {a, c});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::matmul_nt(v[0], v[1])); }, {a, b});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::transpose(v[0])); }, {a});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::add(v[0], v[1])); }, {a, b});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::sub(v[0], v[1])); }, {a, b});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::hadamard(v[0], v[1])); }, {a, b});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::scale(v[0], -2.5)); }, {a});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::add_row(v[0], v[1])); }, {a, row});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::tanh(v[0])); }, {a});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::exp(v[0])); }, {a});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::square(v[0])); }, {a});
  expect_tight([](ad::Tape&, const auto& v) { return ad::mean(ad::square(v[0])); }, {a});
}

TEST_CASE("row transforms match finite differences") {
  Rng rng(2);
  const Mat a = random_mat(rng, 4, 5, 2.0);
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::normalize_rows(v[0])); }, {a});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::standardize_rows(v[0])); }, {a});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::softmax_rows(v[0])); }, {a});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::log_softmax_rows(v[0])); }, {a});
  const Mat sq = random_mat(rng, 5, 5);
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::causal_softmax_rows(v[0])); }, {sq});
}

TEST_CASE("structural ops match finite differences") {
  Rng rng(3);
  const Mat a = random_mat(rng, 6, 3), b = random_mat(rng, 2, 3), c = random_mat(rng, 6, 2);
  const std::vector<int> lengths{2, 1, 3};
  expect_tight([&](ad::Tape&, const auto& v) { return probe(ad::segment_mean(v[0], lengths)); }, {a});
  const std::vector<int> idx{4, 0, 4, 2};
  expect_tight([&](ad::Tape&, const auto& v) { return probe(ad::gather_rows(v[0], idx)); }, {a});
  expect_tight(
      [](ad::Tape&, const auto& v) {
        const std::vector<ad::Var> parts{v[0], v[1]};
        return probe(ad::concat_rows(parts));
      },
      {a, b});
  expect_tight(
      [](ad::Tape&, const auto& v) {
        const std::vector<ad::Var> parts{v[0], v[1]};
        return probe(ad::concat_cols(parts));
      },
      {a, c});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::slice_rows(v[0], 1, 3)); }, {a});
  expect_tight([](ad::Tape&, const auto& v) { return probe(ad::slice_cols(v[0], 1, 2)); }, {a});
  const std::vector<int> targets{0, 2, 1, 0, 1, 2};
  const std::vector<char> mask{1, 0, 1, 1, 0, 1};
  expect_tight(
      [&](ad::Tape&, const auto& v) { return ad::masked_nll(ad::log_softmax_rows(v[0]), targets, mask); },
      {a});
}

TEST_CASE("stop_gradient blocks flow and constants carry no gradient") {
  ad::Tape tape;
  Rng rng(4);
  const ad::Var x = tape.variable(random_mat(rng, 2, 2));
  const ad::Var k = tape.constant(random_mat(rng, 2, 2));
  const ad::Var y = ad::add(ad::stop_gradient(x), k);
  CHECK_FALSE(y.requires_grad());
  const ad::Var z = ad::sum(ad::add(ad::square(x), ad::stop_gradient(ad::square(x))));
  tape.backward(z);
  CHECK((x.grad() - 2.0 * x.value()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(k.grad().size() == 0);
}

TEST_CASE("causal softmax leaves the upper triangle empty") {
  ad::Tape tape;
  Rng rng(5);
  const ad::Var s = ad::causal_softmax_rows(tape.constant(random_mat(rng, 6, 6)));
  for (int i = 0; i < 6; ++i) {
    CHECK(s.value().row(i).sum() == doctest::Approx(1.0).epsilon(1e-14));
    for (int j = i + 1; j < 6; ++j) CHECK(s.value()(i, j) == 0.0);
  }
}

TEST_CASE("standardize_rows output has zero mean and unit variance") {
  ad::Tape tape;
  Rng rng(6);
  const ad::Var s = ad::standardize_rows(tape.constant(random_mat(rng, 5, 40, 3.0)), 0.0);
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(s.value().row(i).mean()) < 1e-12);
    CHECK(s.value().row(i).squaredNorm() / 40.0 == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("degenerate and mismatched inputs throw") {
  ad::Tape tape;
  CHECK_THROWS_AS(ad::normalize_rows(tape.constant(Mat::Zero(2, 3))), DegenerateInput);
  CHECK_THROWS_AS(ad::matmul(tape.constant(Mat::Ones(2, 3)), tape.constant(Mat::Ones(2, 3))),
                  DimensionMismatch);
  CHECK_THROWS(tape.backward(tape.variable(Mat::Ones(2, 2))));
}
