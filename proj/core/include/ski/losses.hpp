#pragma once

// Training objectives. Each loss exists twice: as a graph builder over
// ad::Var (used by training and the gradient checks) and as a value-level
// function returning a LossValue. The value functions evaluate the same
// graph on constants, so the two can never drift apart.

#include "ski/autodiff.hpp"
#include "ski/core.hpp"
#include "ski/kvconfig.hpp"

#include <span>
#include <string>
#include <vector>

namespace ski {

enum class DistillKind { kMse, kKl, kContrastive };
enum class KdMode { kOnline, kOffline, kFeatureNoProj, kFeatureProj };

std::string to_string(DistillKind kind);
std::string to_string(KdMode mode);
/// Accepts mse|kl|contrastive; throws ConfigError otherwise.
DistillKind parse_distill_kind(const std::string& text);
/// Accepts online|offline|feature|feature_no_proj|feature-proj|feature_proj.
KdMode parse_kd_mode(const std::string& text);

struct LossConfig {
  double tau = 0.07;
  double alpha = 10.0;
  DistillKind distill = DistillKind::kMse;
  KdMode kd_mode = KdMode::kOnline;
  /// Temperature of the KL and contrastive distillation variants.
  double tau_distill = 0.1;
  /// Divide F_LV / F_LS by tau before the MSE distillation term.
  bool scaled_logits = false;
  /// Block distillation gradients into the skeleton side in online mode.
  bool stop_gradient = false;

  void validate() const;
  static LossConfig from_kv(const KvConfig& kv);
  KvConfig to_kv() const;
};

struct LossComponent {
  std::string name;
  double value = 0.0;
  double weight = 1.0;
};

struct LossValue {
  double scalar = 0.0;
  std::vector<LossComponent> components;

  /// Throws ContractViolation for an unknown name.
  double component(const std::string& name) const;
  /// Single-component value with weight 1.
  static LossValue single(const std::string& name, double value);
};

namespace graph {

/// Mean over rows of -log softmax(logits)[target].
ad::Var cross_entropy(const ad::Var& logits, std::span<const int> targets);
/// Class-prompt cross-entropy: logits = Z T^T / tau.
ad::Var contrastive_ce(const ad::Var& z, const ad::Var& text, std::span<const int> targets,
                       double tau);
ad::Var distill_mse(const ad::Var& f_lv, const ad::Var& f_ls);
/// Mean over rows of KL(softmax(F_LS/tau_d) || softmax(F_LV/tau_d)).
ad::Var distill_kl(const ad::Var& f_lv, const ad::Var& f_ls, double tau_d);
/// Symmetric InfoNCE over the L2-normalized rows of the two matrices.
ad::Var distill_contrastive(const ad::Var& f_lv, const ad::Var& f_ls, double tau_d);
/// Symmetric InfoNCE between matched rows of A and B (rows pre-normalized).
ad::Var info_nce(const ad::Var& a, const ad::Var& b, double tau);
/// Mean squared error between z_v and z_s (or z_s * projection).
ad::Var feature_kd(const ad::Var& z_v, const ad::Var& z_s, const ad::Var* projection);
/// Mean -log p(target) over masked positions of a logit sequence.
ad::Var autoregressive_lm_loss(const ad::Var& logits, std::span<const int> targets,
                               std::span<const char> response_mask);

struct TrimodalTerms {
  ad::Var video_text;
  ad::Var skeleton_text;
  ad::Var video_skeleton;
  ad::Var total;
};
TrimodalTerms trimodal_contrastive(const ad::Var& z_v, const ad::Var& z_s, const ad::Var& z_t,
                                   double tau);
ad::Var crossproj_align(const ad::Var& z_s, const ad::Var& z_v_frozen, double tau);

}  // namespace graph

// Value-level API.

LossValue contrastive_ce(const Mat& z, const Mat& text, std::span<const int> targets, double tau);
/// Same loss from a precomputed similarity matrix.
LossValue contrastive_ce(const LogitMatrix& similarities, std::span<const int> targets, double tau);
/// Shapes and row/column ids must agree.
LossValue distill_mse(const LogitMatrix& f_lv, const LogitMatrix& f_ls);
LossValue distill_kl(const LogitMatrix& f_lv, const LogitMatrix& f_ls, double tau_d);
LossValue distill_contrastive(const LogitMatrix& f_lv, const LogitMatrix& f_ls, double tau_d);
/// `projection` may be null (requires D_v = D_s) or D_s x D_v.
LossValue feature_kd(const Mat& z_v, const Mat& z_s, const Mat* projection);
LossValue scd_total(const LossValue& ce_video, const LossValue& ce_skeleton,
                    const LossValue& distill, double alpha);
LossValue trimodal_contrastive(const Mat& z_v, const Mat& z_s, const Mat& z_t, double tau);
LossValue crossproj_align(const Mat& z_s, const Mat& z_v_frozen, double tau);
LossValue autoregressive_lm_loss(const Mat& logits, std::span<const int> targets,
                                 std::span<const char> response_mask);

}  // namespace ski
