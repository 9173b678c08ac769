#include "ski/losses.hpp"

#include "ski/error.hpp"

#include <cmath>
#include <numeric>

namespace ski {

std::string to_string(DistillKind kind) {
  switch (kind) {
    case DistillKind::kMse: return "mse";
    case DistillKind::kKl: return "kl";
    case DistillKind::kContrastive: return "contrastive";
  }
  return "?";
}

std::string to_string(KdMode mode) {
  switch (mode) {
    case KdMode::kOnline: return "online";
    case KdMode::kOffline: return "offline";
    case KdMode::kFeatureNoProj: return "feature_no_proj";
    case KdMode::kFeatureProj: return "feature_proj";
  }
  return "?";
}

DistillKind parse_distill_kind(const std::string& text) {
  if (text == "mse") return DistillKind::kMse;
  if (text == "kl") return DistillKind::kKl;
  if (text == "contrastive") return DistillKind::kContrastive;
  throw ConfigError("unknown distillation loss `" + text + "` (expected mse, kl or contrastive)");
}

KdMode parse_kd_mode(const std::string& text) {
  if (text == "online") return KdMode::kOnline;
  if (text == "offline") return KdMode::kOffline;
  if (text == "feature" || text == "feature_no_proj" || text == "feature-no-proj") {
    return KdMode::kFeatureNoProj;
  }
  if (text == "feature-proj" || text == "feature_proj") return KdMode::kFeatureProj;
  throw ConfigError("unknown kd mode `" + text +
                    "` (expected online, offline, feature or feature-proj)");
}

void LossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("loss.tau must be positive");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("loss.alpha must be non-negative");
  if (!(tau_distill > 0.0) || !std::isfinite(tau_distill)) {
    throw ConfigError("loss.tau_distill must be positive");
  }
}

LossConfig LossConfig::from_kv(const KvConfig& kv) {
  LossConfig c;
  c.tau = kv.get_double("tau", c.tau);
  c.alpha = kv.get_double("alpha", c.alpha);
  if (kv.has("distill")) c.distill = parse_distill_kind(kv.get("distill"));
  if (kv.has("kd_mode")) c.kd_mode = parse_kd_mode(kv.get("kd_mode"));
  c.tau_distill = kv.get_double("tau_distill", c.tau_distill);
  c.scaled_logits = kv.get_bool("scaled_logits", c.scaled_logits);
  c.stop_gradient = kv.get_bool("stop_gradient", c.stop_gradient);
  c.validate();
  return c;
}

KvConfig LossConfig::to_kv() const {
  KvConfig kv;
  kv.set("tau", format_double(tau));
  kv.set("alpha", format_double(alpha));
  kv.set("distill", to_string(distill));
  kv.set("kd_mode", to_string(kd_mode));
  kv.set("tau_distill", format_double(tau_distill));
  kv.set("scaled_logits", scaled_logits ? "true" : "false");
  kv.set("stop_gradient", stop_gradient ? "true" : "false");
  return kv;
}

double LossValue::component(const std::string& name) const {
  for (const auto& c : components) {
    if (c.name == name) return c.value;
  }
  throw ContractViolation("loss has no component `" + name + "`");
}

LossValue LossValue::single(const std::string& name, double value) {
  return LossValue{value, {LossComponent{name, value, 1.0}}};
}

// ---------------------------------------------------------------------------

namespace graph {
namespace {

void check_temperature(double tau, const char* what) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ContractViolation(std::string(what) + ": temperature must be positive");
  }
}

void check_same_shape(const ad::Var& a, const ad::Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionMismatch(std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()) + " differ");
  }
}

std::vector<int> diagonal_targets(Eigen::Index n) {
  std::vector<int> t(static_cast<std::size_t>(n));
  std::iota(t.begin(), t.end(), 0);
  return t;
}

}  // namespace

ad::Var cross_entropy(const ad::Var& logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw DimensionMismatch("cross_entropy: one target per row required");
  }
  for (int t : targets) {
    if (t < 0 || t >= logits.cols()) {
      throw ContractViolation("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                              std::to_string(logits.cols()) + ")");
    }
  }
  const std::vector<char> all(targets.size(), 1);
  return ad::masked_nll(ad::log_softmax_rows(logits), targets, all);
}

ad::Var contrastive_ce(const ad::Var& z, const ad::Var& text, std::span<const int> targets,
                       double tau) {
  check_temperature(tau, "contrastive_ce");
  if (z.cols() != text.cols()) throw DimensionMismatch("contrastive_ce: embedding dims differ");
  return cross_entropy(ad::scale(ad::matmul_nt(z, text), 1.0 / tau), targets);
}

ad::Var distill_mse(const ad::Var& f_lv, const ad::Var& f_ls) {
  check_same_shape(f_lv, f_ls, "distill_mse");
  return ad::mean(ad::square(ad::sub(f_lv, f_ls)));
}

ad::Var distill_kl(const ad::Var& f_lv, const ad::Var& f_ls, double tau_d) {
  check_temperature(tau_d, "distill_kl");
  check_same_shape(f_lv, f_ls, "distill_kl");
  const ad::Var log_p = ad::log_softmax_rows(ad::scale(f_ls, 1.0 / tau_d));
  const ad::Var log_q = ad::log_softmax_rows(ad::scale(f_lv, 1.0 / tau_d));
  const ad::Var kl = ad::hadamard(ad::exp(log_p), ad::sub(log_p, log_q));
  return ad::scale(ad::sum(kl), 1.0 / static_cast<double>(f_lv.rows()));
}

ad::Var info_nce(const ad::Var& a, const ad::Var& b, double tau) {
  check_temperature(tau, "info_nce");
  check_same_shape(a, b, "info_nce");
  if (a.rows() < 2) throw ContractViolation("info_nce: batch needs at least 2 rows for negatives");
  const std::vector<int> diag = diagonal_targets(a.rows());
  const ad::Var logits = ad::scale(ad::matmul_nt(a, b), 1.0 / tau);
  const ad::Var forward = cross_entropy(logits, diag);
  const ad::Var backward = cross_entropy(ad::transpose(logits), diag);
  return ad::scale(ad::add(forward, backward), 0.5);
}

ad::Var distill_contrastive(const ad::Var& f_lv, const ad::Var& f_ls, double tau_d) {
  check_same_shape(f_lv, f_ls, "distill_contrastive");
  if (f_lv.rows() < 2) {
    throw ContractViolation("distill_contrastive: batch needs at least 2 rows for negatives");
  }
  return info_nce(ad::normalize_rows(f_lv), ad::normalize_rows(f_ls), tau_d);
}

ad::Var feature_kd(const ad::Var& z_v, const ad::Var& z_s, const ad::Var* projection) {
  if (z_v.rows() != z_s.rows()) throw DimensionMismatch("feature_kd: batch sizes differ");
  ad::Var target = z_s;
  if (projection) {
    if (projection->rows() != z_s.cols() || projection->cols() != z_v.cols()) {
      throw DimensionMismatch("feature_kd: projection must map D_s=" + std::to_string(z_s.cols()) +
                              " to D_v=" + std::to_string(z_v.cols()));
    }
    target = ad::matmul(z_s, *projection);
  } else if (z_v.cols() != z_s.cols()) {
    throw DimensionMismatch("feature_kd without projection needs D_v == D_s (" +
                            std::to_string(z_v.cols()) + " vs " + std::to_string(z_s.cols()) + ")");
  }
  return ad::mean(ad::square(ad::sub(z_v, target)));
}

ad::Var autoregressive_lm_loss(const ad::Var& logits, std::span<const int> targets,
                               std::span<const char> response_mask) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows() ||
      targets.size() != response_mask.size()) {
    throw DimensionMismatch("autoregressive_lm_loss: logits, targets and mask lengths differ");
  }
  return ad::masked_nll(ad::log_softmax_rows(logits), targets, response_mask);
}

TrimodalTerms trimodal_contrastive(const ad::Var& z_v, const ad::Var& z_s, const ad::Var& z_t,
                                   double tau) {
  TrimodalTerms t;
  t.video_text = info_nce(z_v, z_t, tau);
  t.skeleton_text = info_nce(z_s, z_t, tau);
  t.video_skeleton = info_nce(z_v, z_s, tau);
  t.total = ad::add(ad::add(t.video_text, t.skeleton_text), t.video_skeleton);
  return t;
}

ad::Var crossproj_align(const ad::Var& z_s, const ad::Var& z_v_frozen, double tau) {
  return info_nce(z_s, ad::stop_gradient(z_v_frozen), tau);
}

}  // namespace graph

// ---------------------------------------------------------------------------

namespace {

void check_normalized(const Mat& rows, const char* what) {
  if (!rows_normalized(rows)) {
    throw ContractViolation(std::string(what) + ": rows must have unit norm");
  }
}

void check_aligned(const LogitMatrix& a, const LogitMatrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionMismatch(std::string(what) + ": logit matrices differ in shape");
  }
  if (a.row_ids != b.row_ids || a.col_ids != b.col_ids) {
    throw ContractViolation(std::string(what) + ": row or column ids are not aligned");
  }
}

}  // namespace

LossValue contrastive_ce(const Mat& z, const Mat& text, std::span<const int> targets, double tau) {
  check_normalized(z, "contrastive_ce");
  check_normalized(text, "contrastive_ce");
  ad::Tape t;
  return LossValue::single(
      "ce", graph::contrastive_ce(t.constant(z), t.constant(text), targets, tau).scalar());
}

LossValue contrastive_ce(const LogitMatrix& similarities, std::span<const int> targets,
                         double tau) {
  if (!(tau > 0.0)) throw ContractViolation("contrastive_ce: temperature must be positive");
  ad::Tape t;
  return LossValue::single(
      "ce",
      graph::cross_entropy(ad::scale(t.constant(similarities.values), 1.0 / tau), targets).scalar());
}

LossValue distill_mse(const LogitMatrix& f_lv, const LogitMatrix& f_ls) {
  check_aligned(f_lv, f_ls, "distill_mse");
  ad::Tape t;
  return LossValue::single(
      "distill_mse", graph::distill_mse(t.constant(f_lv.values), t.constant(f_ls.values)).scalar());
}

LossValue distill_kl(const LogitMatrix& f_lv, const LogitMatrix& f_ls, double tau_d) {
  check_aligned(f_lv, f_ls, "distill_kl");
  ad::Tape t;
  return LossValue::single(
      "distill_kl",
      graph::distill_kl(t.constant(f_lv.values), t.constant(f_ls.values), tau_d).scalar());
}

LossValue distill_contrastive(const LogitMatrix& f_lv, const LogitMatrix& f_ls, double tau_d) {
  check_aligned(f_lv, f_ls, "distill_contrastive");
  ad::Tape t;
  return LossValue::single(
      "distill_contrastive",
      graph::distill_contrastive(t.constant(f_lv.values), t.constant(f_ls.values), tau_d).scalar());
}

LossValue feature_kd(const Mat& z_v, const Mat& z_s, const Mat* projection) {
  ad::Tape t;
  const ad::Var p = projection ? t.constant(*projection) : ad::Var();
  return LossValue::single(
      "feature_kd",
      graph::feature_kd(t.constant(z_v), t.constant(z_s), projection ? &p : nullptr).scalar());
}

LossValue scd_total(const LossValue& ce_video, const LossValue& ce_skeleton,
                    const LossValue& distill, double alpha) {
  if (!(alpha >= 0.0)) throw ContractViolation("scd_total: alpha must be non-negative");
  for (const LossValue* v : {&ce_video, &ce_skeleton, &distill}) {
    if (!std::isfinite(v->scalar)) throw ContractViolation("scd_total: non-finite component");
  }
  LossValue out;
  out.scalar = ce_video.scalar + ce_skeleton.scalar + alpha * distill.scalar;
  out.components = {{"ce_video", ce_video.scalar, 1.0},
                    {"ce_skeleton", ce_skeleton.scalar, 1.0},
                    {"distill", distill.scalar, alpha}};
  return out;
}

LossValue trimodal_contrastive(const Mat& z_v, const Mat& z_s, const Mat& z_t, double tau) {
  ad::Tape t;
  const auto terms = graph::trimodal_contrastive(t.constant(z_v), t.constant(z_s), t.constant(z_t), tau);
  LossValue out;
  out.components = {{"video_text", terms.video_text.scalar(), 1.0},
                    {"skeleton_text", terms.skeleton_text.scalar(), 1.0},
                    {"video_skeleton", terms.video_skeleton.scalar(), 1.0}};
  out.scalar = terms.total.scalar();
  return out;
}

LossValue crossproj_align(const Mat& z_s, const Mat& z_v_frozen, double tau) {
  ad::Tape t;
  return LossValue::single(
      "crossproj", graph::crossproj_align(t.constant(z_s), t.constant(z_v_frozen), tau).scalar());
}

LossValue autoregressive_lm_loss(const Mat& logits, std::span<const int> targets,
                                 std::span<const char> response_mask) {
  ad::Tape t;
  return LossValue::single(
      "lm_nll", graph::autoregressive_lm_loss(t.constant(logits), targets, response_mask).scalar());
}

}  // namespace ski
