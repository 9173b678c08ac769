#pragma once

// Projector training into a frozen toy causal language model. Encoder
// features become soft tokens in the LM's input space; only the projectors
// learn. Captions are predicted after a fixed chat template:
//   user: <query> <visual tokens> [<skeleton tokens>] assistant: <caption> <eos>

#include "ski/autodiff.hpp"
#include "ski/encoders.hpp"
#include "ski/kvconfig.hpp"
#include "ski/params.hpp"
#include "ski/synthdata.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ski {
class RunRecord;
}

namespace ski::lvlm {

struct LmConfig {
  int width = 64;  ///< K
  int layers = 2;
  int heads = 2;
  int mlp_width = 128;
  int max_positions = 64;
  std::uint64_t seed = 0x70C1A11;
};

/// Frozen random causal transformer over the synthetic vocabulary. Blocks
/// are pre-activation free: x += attention(x); x += W2 tanh(W1 x + b1);
/// logits = standardize(x) W_out. Attention is strictly causal.
class ToyCausalLM {
 public:
  explicit ToyCausalLM(const LmConfig& config = {});

  const LmConfig& config() const { return config_; }
  int width() const { return config_.width; }
  int vocab_size() const { return vocab_size_; }
  /// Read-only: every array is frozen at construction.
  const ParameterSet& params() const { return params_; }
  std::uint64_t checksum() const { return params_.checksum(); }

  /// n x K rows of the token table.
  Mat token_embeddings(const std::vector<int>& ids) const;
  ad::Var token_embeddings(const BoundParams& bound, const std::vector<int>& ids) const;

  /// L x V next-token logits of an L x K input sequence.
  ad::Var forward(const ad::Var& inputs, const BoundParams& bound) const;
  Mat logits(const Mat& inputs) const;
  BoundParams bind_frozen(ad::Tape& tape) const { return bind(params_, tape, true); }

 private:
  struct Block {
    std::vector<std::size_t> wq, wk, wv;
    std::size_t wo, w1, b1, w2;
  };
  LmConfig config_;
  int vocab_size_ = 0;
  ParameterSet params_;
  std::size_t tokens_ = 0;
  std::size_t positions_ = 0;
  std::size_t out_ = 0;
  std::vector<Block> blocks_;
};

enum class Modality { kText, kVisual, kSkeleton };
std::string to_string(Modality modality);

/// n x K continuous tokens of one modality.
struct TokenBlock {
  Mat tokens;
  Modality modality = Modality::kText;

  int size() const { return static_cast<int>(tokens.rows()); }
};

struct ProjectorConfig {
  int d_v = 32;
  int d_s = 32;
  int n_v = 8;
  int n_s = 16;
  int k = 64;

  void validate() const;
};

/// Per-token linear map source-dim -> K (no bias, so a zero map gives a
/// zero block).
class Projector {
 public:
  Projector() = default;
  Projector(int d_in, int k, ParameterSet& params, const std::string& name, std::uint64_t seed);

  int d_in() const { return d_in_; }
  int k() const { return k_; }
  std::size_t index() const { return index_; }

  ad::Var apply(const ad::Var& tokens, const BoundParams& bound) const;

 private:
  int d_in_ = 0;
  int k_ = 0;
  std::size_t index_ = 0;
};

/// T_v and (optionally) T_s in one parameter set:
/// projector.visual.weight, projector.skeleton.weight.
class Projectors {
 public:
  Projectors(const ProjectorConfig& config, bool with_skeleton, std::uint64_t seed);

  const ProjectorConfig& config() const { return config_; }
  bool has_skeleton() const { return skeleton_.has_value(); }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const Projector& visual() const { return visual_; }
  /// Throws ContractViolation when no skeleton projector exists.
  const Projector& skeleton() const;

  TokenBlock project_visual(const Mat& tokens) const;
  TokenBlock project_skeleton(const Mat& tokens) const;

 private:
  ProjectorConfig config_;
  ParameterSet params_;
  Projector visual_;
  std::optional<Projector> skeleton_;
};

/// Generic value-level projection: tokens * weight. Token count preserved.
TokenBlock project(const Mat& weight, const Mat& tokens, Modality modality);

/// Per-frame pre-pooling features of a frozen video encoder, n_v = T_v.
Mat extract_visual_tokens(const VideoEncoder& video, const VideoClip& clip);
/// Per-frame penultimate features of SkeletonCLIP's g_s, n_s = T_s.
Mat extract_skeleton_tokens(const SkeletonEncoder& skeleton, const SkeletonSequence& seq);

struct Span {
  std::string name;  ///< "user", "query", "visual", "skeleton", "assistant"
  int begin = 0;
  int length = 0;
};

struct AssembledPrompt {
  Mat tokens;  ///< L x K
  std::vector<Span> spans;

  int length() const { return static_cast<int>(tokens.rows()); }
  const Span* span(const std::string& name) const;
};

/// "user:" Q_t Q_v [Q_s] "assistant:", literal words embedded by the LM.
AssembledPrompt assemble_prompt(const ToyCausalLM& lm, const TokenBlock& q_t, const TokenBlock& q_v,
                                const TokenBlock* q_s);

struct LvlmConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  bool use_skeleton = true;
  /// Last fraction of each class's samples is held out from training.
  double holdout_fraction = 0.25;
  int max_len = 12;
  std::string query = "what is the person doing ?";

  void validate() const;
  /// Reads `lvlm.`-prefixed or plain keys.
  static LvlmConfig from_kv(const KvConfig& kv);
  KvConfig to_kv() const;
};

/// Frozen encoder tokens and target caption of one sample.
struct CaptionExample {
  Mat visual;
  std::optional<Mat> skeleton;
  std::vector<int> caption;  ///< without <eos>
  int class_id = 0;
};

struct CaptionSplit {
  std::vector<CaptionExample> train;
  std::vector<CaptionExample> heldout;
};

/// Extracts tokens once with frozen encoders. `skeleton` may be null, in
/// which case no example carries skeleton tokens.
CaptionSplit make_caption_split(const synth::Dataset& dataset, const VideoEncoder& video,
                                const SkeletonEncoder* skeleton, double holdout_fraction);

struct CaptionScore {
  double nll = 0.0;  ///< mean per response token
  double next_token_accuracy = 0.0;
  int tokens = 0;
};

/// Teacher-forced scoring over response positions: every caption token and
/// the closing <eos>. Skeleton tokens are used only when `use_skeleton` is
/// set and the projector and the example both have them.
CaptionScore teacher_forced_score(const ToyCausalLM& lm, const Projectors& projectors,
                                  const std::vector<CaptionExample>& examples,
                                  const std::string& query, bool use_skeleton);

/// Trains only the projectors. The LM and encoder checksums are taken
/// before training and re-checked after every epoch; any drift throws
/// ContractViolation.
void train_projectors(const ToyCausalLM& lm, Projectors& projectors, const CaptionSplit& data,
                      const LvlmConfig& cfg, const VideoEncoder& video,
                      const SkeletonEncoder* skeleton, RunRecord* record);

/// Greedy decoding from a skeleton-free prompt. Stops at <eos> or after
/// max_len tokens. Throws ContractViolation when max_len < 1.
std::vector<int> generate_caption(const ToyCausalLM& lm, const Projector& visual,
                                  const ParameterSet& projector_params, const Mat& visual_tokens,
                                  const std::string& query, int max_len);
std::string generate_caption_text(const ToyCausalLM& lm, const Projectors& projectors,
                                  const VideoEncoder& video, const VideoClip& clip,
                                  const std::string& query, int max_len);

}  // namespace ski::lvlm
