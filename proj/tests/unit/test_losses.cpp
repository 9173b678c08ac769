#include "ski/error.hpp"
#include "ski/losses.hpp"

#include "gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace ski;
using ski::testing::check_gradients;
using ski::testing::random_mat;
using ski::testing::random_unit_rows;

namespace {

using LD = long double;

LogitMatrix logits(const Mat& m) {
  LogitMatrix l;
  l.values = m;
  for (int i = 0; i < m.rows(); ++i) l.row_ids.push_back(i);
  for (int j = 0; j < m.cols(); ++j) l.col_ids.push_back(j);
  return l;
}

// Plain-loop oracles in extended precision.
LD log_sum_exp(const std::vector<LD>& v) {
  LD m = v[0];
  for (LD x : v) m = std::max(m, x);
  LD s = 0;
  for (LD x : v) s += std::exp(x - m);
  return m + std::log(s);
}

LD ce_oracle(const Mat& sims, const std::vector<int>& targets, double tau) {
  LD total = 0;
  for (int i = 0; i < sims.rows(); ++i) {
    std::vector<LD> row;
    for (int j = 0; j < sims.cols(); ++j) row.push_back(static_cast<LD>(sims(i, j)) / tau);
    total += log_sum_exp(row) - row[static_cast<std::size_t>(targets[static_cast<std::size_t>(i)])];
  }
  return total / sims.rows();
}

LD info_nce_oracle(const Mat& a, const Mat& b, double tau) {
  const int n = static_cast<int>(a.rows());
  LD fwd = 0, bwd = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<LD> r, c;
    for (int j = 0; j < n; ++j) {
      LD dij = 0, dji = 0;
      for (int k = 0; k < a.cols(); ++k) {
        dij += static_cast<LD>(a(i, k)) * b(j, k);
        dji += static_cast<LD>(a(j, k)) * b(i, k);
      }
      r.push_back(dij / tau);
      c.push_back(dji / tau);
    }
    fwd += log_sum_exp(r) - r[static_cast<std::size_t>(i)];
    bwd += log_sum_exp(c) - c[static_cast<std::size_t>(i)];
  }
  return 0.5L * (fwd + bwd) / n;
}

Mat unit_rows_of(const Mat& m) {
  Mat out = m;
  for (int i = 0; i < m.rows(); ++i) out.row(i) /= m.row(i).norm();
  return out;
}

}  // namespace

TEST_CASE("contrastive_ce fixtures and oracle") {
  const std::vector<int> t0{0};
  for (int c : {2, 5, 17}) {
    const Mat flat = Mat::Constant(1, c, 0.4);
    CHECK(contrastive_ce(logits(flat), t0, 0.07).scalar == doctest::Approx(std::log(c)).epsilon(1e-12));
  }
  Mat s(1, 3);
  s << 0.9, 0.1, -0.3;
  CHECK(contrastive_ce(logits(s), t0, 0.07).scalar ==
        doctest::Approx(static_cast<double>(ce_oracle(s, {0}, 0.07))).epsilon(1e-12));

  Rng rng(7);
  const Mat z = random_unit_rows(rng, 6, 8), text = random_unit_rows(rng, 4, 8);
  const std::vector<int> targets{0, 3, 1, 2, 2, 0};
  CHECK(contrastive_ce(z, text, targets, 0.1).scalar ==
        doctest::Approx(static_cast<double>(ce_oracle(z * text.transpose(), targets, 0.1))).epsilon(1e-12));
  CHECK_THROWS_AS(contrastive_ce(random_mat(rng, 2, 8), text, std::vector<int>{0, 1}, 0.1),
                  ContractViolation);
  CHECK_THROWS(contrastive_ce(logits(s), std::vector<int>{3}, 0.07));
}

TEST_CASE("contrastive_ce is shift invariant and decreases with target similarity") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + static_cast<int>(rng.index(8));
    const Mat s = random_mat(rng, 3, c, 0.5);
    std::vector<int> t;
    for (int i = 0; i < 3; ++i) t.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(c))));
    const double base = contrastive_ce(logits(s), t, 0.07).scalar;
    const Mat shifted = (s.array() + rng.uniform(-2, 2)).matrix();
    CHECK(std::abs(contrastive_ce(logits(shifted), t, 0.07).scalar - base) < 1e-9);
    Mat up = s;
    up(0, t[0]) += 0.05;
    CHECK(contrastive_ce(logits(up), t, 0.07).scalar < base);
  }
}

TEST_CASE("distill_mse") {
  Rng rng(9);
  const Mat a = random_mat(rng, 4, 6);
  CHECK(distill_mse(logits(a), logits(a)).scalar == 0.0);
  CHECK(distill_mse(logits(Mat::Identity(2, 2)), logits(Mat::Zero(2, 2))).scalar == 0.5);
  const Mat b = random_mat(rng, 4, 6);
  LD oracle = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 6; ++j) oracle += (static_cast<LD>(a(i, j)) - b(i, j)) * (static_cast<LD>(a(i, j)) - b(i, j));
  }
  CHECK(distill_mse(logits(a), logits(b)).scalar == doctest::Approx(static_cast<double>(oracle / 24)).epsilon(1e-13));
  CHECK(distill_mse(logits(a), logits(b)).scalar == distill_mse(logits(b), logits(a)).scalar);

  LogitMatrix shuffled = logits(b);
  std::swap(shuffled.col_ids[0], shuffled.col_ids[1]);
  CHECK_THROWS_AS(distill_mse(logits(a), shuffled), ContractViolation);
  CHECK_THROWS_AS(distill_mse(logits(a), logits(random_mat(rng, 4, 5))), DimensionMismatch);
}

TEST_CASE("distill_kl") {
  Rng rng(10);
  const Mat a = random_mat(rng, 3, 5);
  CHECK(std::abs(distill_kl(logits(a), logits(a), 0.1).scalar) < 1e-12);

  // Teacher nearly one-hot, student uniform, C = 2.
  Mat teacher(1, 2), student(1, 2);
  teacher << 1.0, 0.0;
  student << 0.3, 0.3;
  const double tau = 0.1;
  const LD p0 = 1.0L / (1.0L + std::exp(-1.0L / tau)), p1 = 1.0L - p0;
  const LD oracle = p0 * std::log(p0 / 0.5L) + p1 * std::log(p1 / 0.5L);
  CHECK(distill_kl(logits(student), logits(teacher), tau).scalar ==
        doctest::Approx(static_cast<double>(oracle)).epsilon(1e-12));

  int asymmetric = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Mat x = random_mat(rng, 3, 4), y = random_mat(rng, 3, 4);
    const double kxy = distill_kl(logits(x), logits(y), 0.5).scalar;
    CHECK(kxy >= 0.0);
    if (std::abs(kxy - distill_kl(logits(y), logits(x), 0.5).scalar) > 1e-6) ++asymmetric;
  }
  CHECK(asymmetric > 0);
}

TEST_CASE("distill_contrastive") {
  Mat same(2, 3);
  same << 1.0, 0.2, -0.5, -0.3, 0.8, 0.1;
  const double matched = distill_contrastive(logits(same), logits(same), 0.1).scalar;
  CHECK(matched < std::log(2.0));
  Mat swapped = same;
  swapped.row(0) = same.row(1);
  swapped.row(1) = same.row(0);
  CHECK(distill_contrastive(logits(same), logits(swapped), 0.1).scalar > matched);

  Rng rng(11);
  const Mat a = random_mat(rng, 4, 5), b = random_mat(rng, 4, 5);
  CHECK(distill_contrastive(logits(a), logits(b), 0.2).scalar ==
        doctest::Approx(static_cast<double>(info_nce_oracle(unit_rows_of(a), unit_rows_of(b), 0.2))).epsilon(1e-12));
  CHECK_THROWS_AS(distill_contrastive(logits(a.topRows(1)), logits(b.topRows(1)), 0.2), ContractViolation);
}

TEST_CASE("feature_kd") {
  Rng rng(12);
  const Mat zv = random_mat(rng, 5, 4), zs = random_mat(rng, 5, 3);
  CHECK(feature_kd(zv, zv, nullptr).scalar == 0.0);
  const Mat zero = Mat::Zero(3, 4);
  CHECK(feature_kd(zv, zs, &zero).scalar == doctest::Approx(zv.squaredNorm() / 5.0 / 4.0).epsilon(1e-14));
  const Mat p = random_mat(rng, 3, 4);
  LD oracle = 0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 4; ++j) {
      LD proj = 0;
      for (int k = 0; k < 3; ++k) proj += static_cast<LD>(zs(i, k)) * p(k, j);
      oracle += (zv(i, j) - proj) * (zv(i, j) - proj);
    }
  }
  CHECK(feature_kd(zv, zs, &p).scalar == doctest::Approx(static_cast<double>(oracle / 20)).epsilon(1e-12));
  CHECK_THROWS_AS(feature_kd(zv, zs, nullptr), DimensionMismatch);
}

TEST_CASE("scd_total weights and linearity in alpha") {
  const LossValue v = LossValue::single("ce", 0.7), s = LossValue::single("ce", 1.1),
                  d = LossValue::single("distill_mse", 0.013);
  CHECK(scd_total(v, s, d, 0.0).scalar == 0.7 + 1.1);
  CHECK(scd_total(v, s, d, 0.01).components[2].weight == 0.01);
  CHECK(scd_total(v, s, d, 10.0).components[2].weight == 10.0);
  CHECK(scd_total(v, s, d, 10.0).component("distill") == 0.013);
  CHECK_THROWS_AS(scd_total(v, s, d, -1.0), ContractViolation);
  CHECK_THROWS_AS(scd_total(v, s, d, 1.0).component("nope"), ContractViolation);

  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const LossValue dd = LossValue::single("distill", rng.uniform(0, 3));
    const double a0 = rng.uniform(0, 20), a1 = rng.uniform(0, 20);
    const double lhs = scd_total(v, s, dd, a1).scalar - scd_total(v, s, dd, a0).scalar;
    CHECK(std::abs(lhs - (a1 - a0) * dd.scalar) < 1e-9);
  }
}

TEST_CASE("trimodal_contrastive and crossproj_align") {
  Mat same(3, 3);
  same << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  const LossValue t = trimodal_contrastive(same, same, same, 0.1);
  REQUIRE(t.components.size() == 3);
  for (const auto& c : t.components) CHECK(c.value < std::log(3.0));

  Rng rng(14);
  const Mat zv = random_unit_rows(rng, 4, 6), zs = random_unit_rows(rng, 4, 6), zt = random_unit_rows(rng, 4, 6);
  const LD oracle = info_nce_oracle(zv, zt, 0.1) + info_nce_oracle(zs, zt, 0.1) + info_nce_oracle(zv, zs, 0.1);
  CHECK(trimodal_contrastive(zv, zs, zt, 0.1).scalar == doctest::Approx(static_cast<double>(oracle)).epsilon(1e-12));

  const Mat a = random_unit_rows(rng, 3, 5);
  Mat shuffled = a;
  shuffled.row(0) = a.row(2);
  shuffled.row(2) = a.row(0);
  CHECK(crossproj_align(a, a, 0.1).scalar < crossproj_align(a, shuffled, 0.1).scalar);
  const Mat b = random_unit_rows(rng, 3, 5);
  CHECK(crossproj_align(a, b, 0.1).scalar == doctest::Approx(static_cast<double>(info_nce_oracle(a, b, 0.1))).epsilon(1e-12));

  // The frozen side receives no gradient.
  ad::Tape tape;
  const ad::Var zs_var = tape.variable(a), zv_var = tape.variable(b);
  tape.backward(graph::crossproj_align(zs_var, zv_var, 0.1));
  CHECK(zs_var.grad().size() > 0);
  CHECK(zv_var.grad().size() == 0);
}

TEST_CASE("autoregressive_lm_loss") {
  const Mat flat = Mat::Zero(4, 50);
  const std::vector<int> targets{3, 7, 1, 49};
  const std::vector<char> all{1, 1, 1, 1};
  CHECK(autoregressive_lm_loss(flat, targets, all).scalar == doctest::Approx(std::log(50.0)).epsilon(1e-13));

  Rng rng(15);
  const Mat l = random_mat(rng, 5, 9, 2.0);
  const std::vector<int> t{0, 8, 3, 3, 5};
  const std::vector<char> one{0, 0, 1, 0, 0};
  const double single = contrastive_ce(logits(l.middleRows(2, 1)), std::vector<int>{3}, 1.0).scalar;
  CHECK(autoregressive_lm_loss(l, t, one).scalar == doctest::Approx(single).epsilon(1e-13));

  const std::vector<char> mask{0, 1, 1, 0, 1};
  LD oracle = 0;
  for (int i : {1, 2, 4}) {
    std::vector<LD> row;
    for (int j = 0; j < 9; ++j) row.push_back(l(i, j));
    oracle += log_sum_exp(row) - row[static_cast<std::size_t>(t[static_cast<std::size_t>(i)])];
  }
  CHECK(autoregressive_lm_loss(l, t, mask).scalar == doctest::Approx(static_cast<double>(oracle / 3)).epsilon(1e-12));
  CHECK_THROWS(autoregressive_lm_loss(l, t, std::vector<char>(5, 0)));
}

TEST_CASE("loss values are finite and non-negative on random inputs") {
  Rng rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat a = random_unit_rows(rng, 4, 6), b = random_unit_rows(rng, 4, 6), c = random_unit_rows(rng, 3, 6);
    const std::vector<int> t{0, 1, 2, 1};
    for (double v : {contrastive_ce(a, c, t, 0.07).scalar, distill_mse(logits(a), logits(b)).scalar,
                     distill_kl(logits(a), logits(b), 0.1).scalar,
                     distill_contrastive(logits(a), logits(b), 0.1).scalar, feature_kd(a, b, nullptr).scalar,
                     trimodal_contrastive(a, b, a, 0.07).scalar, crossproj_align(a, b, 0.07).scalar}) {
      CHECK(std::isfinite(v));
      CHECK(v >= -1e-12);
    }
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(17);
  const Mat z = random_unit_rows(rng, 5, 6), text = random_unit_rows(rng, 4, 6);
  const Mat f1 = random_mat(rng, 5, 4, 0.5), f2 = random_mat(rng, 5, 4, 0.5);
  const std::vector<int> t{0, 3, 2, 1, 1};
  const auto check = [](const ski::testing::Builder& f, std::vector<Mat> in) {
    const auto r = check_gradients(f, std::move(in), 20, 5);
    CHECK(r.max_rel_error < 1e-4);
  };
  check([&](ad::Tape&, const auto& v) { return graph::contrastive_ce(v[0], v[1], t, 0.07); }, {z, text});
  check([](ad::Tape&, const auto& v) { return graph::distill_mse(v[0], v[1]); }, {f1, f2});
  check([](ad::Tape&, const auto& v) { return graph::distill_kl(v[0], v[1], 0.1); }, {f1, f2});
  check([](ad::Tape&, const auto& v) { return graph::distill_contrastive(v[0], v[1], 0.1); }, {f1, f2});
  const Mat proj = random_mat(rng, 4, 4);
  check([](ad::Tape&, const auto& v) { return graph::feature_kd(v[0], v[1], &v[2]); }, {f1, f2, proj});
  check([](ad::Tape&, const auto& v) { return graph::trimodal_contrastive(v[0], v[1], v[2], 0.1).total; },
        {z, random_unit_rows(rng, 5, 6), random_unit_rows(rng, 5, 6)});
  const Mat lm = random_mat(rng, 6, 11);
  const std::vector<int> lt{1, 2, 3, 4, 5, 6};
  const std::vector<char> mask{0, 0, 1, 1, 1, 1};
  check([&](ad::Tape&, const auto& v) { return graph::autoregressive_lm_loss(v[0], lt, mask); }, {lm});
}

TEST_CASE("loss config parsing") {
  CHECK(parse_kd_mode("online") == KdMode::kOnline);
  CHECK(parse_kd_mode("feature") == KdMode::kFeatureNoProj);
  CHECK(parse_kd_mode("feature-proj") == KdMode::kFeatureProj);
  CHECK(parse_distill_kind("kl") == DistillKind::kKl);
  CHECK_THROWS_AS(parse_kd_mode("sideways"), ConfigError);
  CHECK_THROWS_AS(parse_distill_kind("l1"), ConfigError);

  LossConfig c;
  c.alpha = 0.01;
  c.distill = DistillKind::kContrastive;
  const LossConfig back = LossConfig::from_kv(c.to_kv());
  CHECK(back.alpha == 0.01);
  CHECK(back.distill == DistillKind::kContrastive);
  LossConfig bad;
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
