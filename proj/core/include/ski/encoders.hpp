#pragma once

// Desk-scale encoders. Video and skeleton encoders share one shape: a
// per-frame tanh MLP whose linear output layer gives D_out features, then a
// temporal mean and L2 normalization. The text encoder embeds tokens, adds
// positions, mixes through one tanh layer, averages over tokens and maps
// to D_out.

#include "ski/autodiff.hpp"
#include "ski/core.hpp"
#include "ski/kvconfig.hpp"
#include "ski/params.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ski {

struct EncoderConfig {
  std::vector<int> hidden{64, 64};
  int d_out = 32;
  /// Skeleton only: append per-frame joint displacement (x_t - x_{t-1},
  /// zero at t = 0) to the coordinates.
  bool velocity = false;

  static EncoderConfig from_kv(const KvConfig& kv);
  KvConfig to_kv() const;
};

/// Per-frame MLP: tanh hidden layers, linear output layer.
class FrameMlp {
 public:
  FrameMlp() = default;
  FrameMlp(int input_dim, const EncoderConfig& config, ParameterSet& params,
           const std::string& prefix, std::uint64_t seed);

  ad::Var forward(const ad::Var& frames, const BoundParams& bound) const;
  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }

 private:
  struct Layer {
    std::size_t weight;
    std::size_t bias;
  };
  std::vector<Layer> layers_;
  int input_dim_ = 0;
  int output_dim_ = 0;
};

/// f_v: frames of C x H x W pixels.
class VideoEncoder {
 public:
  VideoEncoder(int channels, int height, int width, const EncoderConfig& config,
               std::uint64_t seed);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  int d_out() const { return mlp_.output_dim(); }
  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }

  /// Stacked raw pixels, one row per frame. Each frame is standardized
  /// (zero mean, unit variance) inside the network.
  /// Throws DimensionMismatch when a clip does not match the encoder.
  Mat stack_input(std::span<const VideoClip* const> clips, std::vector<int>* lengths) const;

  /// Per-frame D_out features of a stacked input (pre-pooling).
  ad::Var frame_features(const ad::Var& input, const BoundParams& bound) const;
  /// B x D_out unit rows: per-frame features, temporal mean, normalize.
  ad::Var embed(const ad::Var& input, std::span<const int> lengths,
                const BoundParams& bound) const;
  ad::Var embed(ad::Tape& tape, const BoundParams& bound,
                std::span<const VideoClip* const> clips) const;

  Mat embed(std::span<const VideoClip* const> clips) const;
  Embedding encode(const VideoClip& clip) const;
  /// T_v x D_out pre-pooling features.
  Mat frame_tokens(const VideoClip& clip) const;

 private:
  int channels_;
  int height_;
  int width_;
  ParameterSet params_;
  FrameMlp mlp_;
};

/// g_s: frames of J joints. The D_out output layer is the penultimate
/// layer with respect to the classifier head.
class SkeletonEncoder {
 public:
  SkeletonEncoder(int joints, const EncoderConfig& config, std::uint64_t seed);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  int d_out() const { return mlp_.output_dim(); }
  int joints() const { return joints_; }
  bool velocity() const { return velocity_; }

  /// One row per frame: J*3 coordinates, then J*3 displacements when the
  /// velocity input is enabled.
  Mat stack_input(std::span<const SkeletonSequence* const> seqs, std::vector<int>* lengths) const;
  ad::Var frame_features(const ad::Var& input, const BoundParams& bound) const;
  /// B x D_out temporal means of penultimate features, not normalized.
  ad::Var pooled(const ad::Var& input, std::span<const int> lengths,
                 const BoundParams& bound) const;
  ad::Var embed(const ad::Var& input, std::span<const int> lengths,
                const BoundParams& bound) const;
  ad::Var embed(ad::Tape& tape, const BoundParams& bound,
                std::span<const SkeletonSequence* const> seqs) const;

  Mat embed(std::span<const SkeletonSequence* const> seqs) const;
  Embedding encode(const SkeletonSequence& seq) const;
  /// T_s x D_out penultimate features.
  Mat frame_tokens(const SkeletonSequence& seq) const;

 private:
  int joints_;
  bool velocity_;
  ParameterSet params_;
  FrameMlp mlp_;
};

struct TextEncoderConfig {
  int width = 64;
  int d_out = 32;
  int max_tokens = 16;
};

/// f_t / g_t over the shared synthetic vocabulary.
class TextEncoder {
 public:
  TextEncoder(const TextEncoderConfig& config, std::uint64_t seed);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  int d_out() const { return config_.d_out; }
  void set_frozen(bool frozen) { params_.set_trainable(!frozen); }
  bool frozen() const { return !params_.any_trainable(); }

  /// C x D_out unit rows. Throws ContractViolation naming any
  /// out-of-vocabulary token.
  ad::Var embed(ad::Tape& tape, const BoundParams& bound,
                const std::vector<TextPrompt>& prompts) const;
  Mat embed(const std::vector<TextPrompt>& prompts) const;
  Embedding encode(const TextPrompt& prompt) const;

 private:
  TextEncoderConfig config_;
  ParameterSet params_;
  std::size_t token_table_;
  std::size_t positions_;
  std::size_t mix_weight_;
  std::size_t mix_bias_;
  std::size_t out_weight_;
  std::size_t out_bias_;
};

/// Linear map from pooled skeleton features to class logits.
class ClassifierHead {
 public:
  ClassifierHead(int d_in, int num_classes, std::uint64_t seed);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  int num_classes() const { return num_classes_; }

  ad::Var logits(const ad::Var& features, const BoundParams& bound) const;

 private:
  int d_in_;
  int num_classes_;
  ParameterSet params_;
};

/// Class logits of one sequence: head(temporal mean of g_s penultimate).
Vec classify_skeleton(const ClassifierHead& head, const SkeletonEncoder& encoder,
                      const SkeletonSequence& seq);

}  // namespace ski
