#include "ski/encoders.hpp"

#include "ski/error.hpp"
#include "ski/rng.hpp"
#include "ski/synthdata.hpp"


namespace ski {

EncoderConfig EncoderConfig::from_kv(const KvConfig& kv) {
  EncoderConfig c;
  if (kv.has("hidden")) {
    c.hidden.clear();
    for (const auto& item : kv.get_list("hidden")) {
      KvConfig one;
      one.set("hidden", item);
      c.hidden.push_back(one.get_int("hidden"));
    }
  }
  c.d_out = kv.get_int("d_out", c.d_out);
  c.velocity = kv.get_bool("velocity", c.velocity);
  for (int h : c.hidden) {
    if (h < 1) throw ConfigError("encoder hidden widths must be positive");
  }
  if (c.d_out < 1) throw ConfigError("encoder d_out must be positive");
  return c;
}

KvConfig EncoderConfig::to_kv() const {
  KvConfig kv;
  std::string h;
  for (std::size_t i = 0; i < hidden.size(); ++i) h += (i ? "," : "") + std::to_string(hidden[i]);
  kv.set("hidden", h);
  kv.set("d_out", std::to_string(d_out));
  kv.set("velocity", velocity ? "true" : "false");
  return kv;
}

FrameMlp::FrameMlp(int input_dim, const EncoderConfig& config, ParameterSet& params,
                   const std::string& prefix, std::uint64_t seed)
    : input_dim_(input_dim), output_dim_(config.d_out) {
  Rng rng(seed);
  int fan_in = input_dim;
  std::vector<int> widths = config.hidden;
  widths.push_back(config.d_out);
  for (std::size_t k = 0; k < widths.size(); ++k) {
    const std::string name = prefix + ".layer" + std::to_string(k);
    Layer layer;
    layer.weight = params.add(name + ".weight", init_weight(rng, fan_in, widths[k]));
    layer.bias = params.add(name + ".bias", Mat::Zero(1, widths[k]));
    layers_.push_back(layer);
    fan_in = widths[k];
  }
}

ad::Var FrameMlp::forward(const ad::Var& frames, const BoundParams& bound) const {
  if (frames.cols() != input_dim_) {
    throw DimensionMismatch("encoder expects " + std::to_string(input_dim_) +
                            " inputs per frame, got " + std::to_string(frames.cols()));
  }
  ad::Var h = frames;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    h = ad::add_row(ad::matmul(h, bound[layers_[k].weight]), bound[layers_[k].bias]);
    if (k + 1 < layers_.size()) h = ad::tanh(h);
  }
  return h;
}

// ---------------------------------------------------------------------------

VideoEncoder::VideoEncoder(int channels, int height, int width, const EncoderConfig& config,
                           std::uint64_t seed)
    : channels_(channels), height_(height), width_(width) {
  mlp_ = FrameMlp(channels * height * width, config, params_, "video", seed);
}

Mat VideoEncoder::stack_input(std::span<const VideoClip* const> clips,
                              std::vector<int>* lengths) const {
  Eigen::Index rows = 0;
  for (const VideoClip* c : clips) {
    if (c->channels != channels_ || c->height != height_ || c->width != width_) {
      throw DimensionMismatch("video encoder expects " + std::to_string(channels_) + "x" +
                              std::to_string(height_) + "x" + std::to_string(width_) +
                              " frames, got " + std::to_string(c->channels) + "x" +
                              std::to_string(c->height) + "x" + std::to_string(c->width));
    }
    if (c->length() < 1) throw DegenerateInput("video clip has no frames");
    rows += c->length();
  }
  Mat x(rows, channels_ * height_ * width_);
  Eigen::Index r = 0;
  if (lengths) lengths->clear();
  for (const VideoClip* c : clips) {
    x.middleRows(r, c->length()) = c->frames;
    r += c->length();
    if (lengths) lengths->push_back(c->length());
  }
  return x;
}

ad::Var VideoEncoder::frame_features(const ad::Var& input, const BoundParams& bound) const {
  return mlp_.forward(ad::standardize_rows(input), bound);
}

ad::Var VideoEncoder::embed(const ad::Var& input, std::span<const int> lengths,
                            const BoundParams& bound) const {
  return ad::normalize_rows(ad::segment_mean(frame_features(input, bound), lengths));
}

ad::Var VideoEncoder::embed(ad::Tape& tape, const BoundParams& bound,
                            std::span<const VideoClip* const> clips) const {
  std::vector<int> lengths;
  const ad::Var x = tape.constant(stack_input(clips, &lengths));
  return embed(x, lengths, bound);
}

Mat VideoEncoder::embed(std::span<const VideoClip* const> clips) const {
  ad::Tape tape;
  const BoundParams bound = bind(params_, tape, true);
  return embed(tape, bound, clips).value();
}

Embedding VideoEncoder::encode(const VideoClip& clip) const {
  const VideoClip* one[] = {&clip};
  return Embedding::unit(embed(one).row(0).transpose());
}

Mat VideoEncoder::frame_tokens(const VideoClip& clip) const {
  ad::Tape tape;
  const BoundParams bound = bind(params_, tape, true);
  const VideoClip* one[] = {&clip};
  return frame_features(tape.constant(stack_input(one, nullptr)), bound).value();
}

// ---------------------------------------------------------------------------

SkeletonEncoder::SkeletonEncoder(int joints, const EncoderConfig& config, std::uint64_t seed)
    : joints_(joints), velocity_(config.velocity) {
  mlp_ = FrameMlp((velocity_ ? 6 : 3) * joints, config, params_, "skeleton", seed);
}

Mat SkeletonEncoder::stack_input(std::span<const SkeletonSequence* const> seqs,
                                 std::vector<int>* lengths) const {
  Eigen::Index rows = 0;
  for (const SkeletonSequence* s : seqs) {
    if (s->joints != joints_ || s->frames.cols() != 3 * joints_) {
      throw DimensionMismatch("skeleton encoder expects " + std::to_string(joints_) +
                              " joints, got " + std::to_string(s->joints));
    }
    if (s->length() < 1) throw DegenerateInput("skeleton sequence has no frames");
    rows += s->length();
  }
  const Eigen::Index d = 3 * joints_;
  Mat x(rows, velocity_ ? 2 * d : d);
  Eigen::Index r = 0;
  if (lengths) lengths->clear();
  for (const SkeletonSequence* s : seqs) {
    x.block(r, 0, s->length(), d) = s->frames;
    if (velocity_) {
      x.block(r, d, 1, d).setZero();
      for (Eigen::Index t = 1; t < s->length(); ++t) {
        x.block(r + t, d, 1, d) = s->frames.row(t) - s->frames.row(t - 1);
      }
    }
    r += s->length();
    if (lengths) lengths->push_back(s->length());
  }
  return x;
}

ad::Var SkeletonEncoder::frame_features(const ad::Var& input, const BoundParams& bound) const {
  return mlp_.forward(ad::standardize_rows(input), bound);
}

ad::Var SkeletonEncoder::pooled(const ad::Var& input, std::span<const int> lengths,
                                const BoundParams& bound) const {
  return ad::segment_mean(frame_features(input, bound), lengths);
}

ad::Var SkeletonEncoder::embed(const ad::Var& input, std::span<const int> lengths,
                               const BoundParams& bound) const {
  return ad::normalize_rows(pooled(input, lengths, bound));
}

ad::Var SkeletonEncoder::embed(ad::Tape& tape, const BoundParams& bound,
                               std::span<const SkeletonSequence* const> seqs) const {
  std::vector<int> lengths;
  const ad::Var x = tape.constant(stack_input(seqs, &lengths));
  return embed(x, lengths, bound);
}

Mat SkeletonEncoder::embed(std::span<const SkeletonSequence* const> seqs) const {
  ad::Tape tape;
  const BoundParams bound = bind(params_, tape, true);
  return embed(tape, bound, seqs).value();
}

Embedding SkeletonEncoder::encode(const SkeletonSequence& seq) const {
  const SkeletonSequence* one[] = {&seq};
  return Embedding::unit(embed(one).row(0).transpose());
}

Mat SkeletonEncoder::frame_tokens(const SkeletonSequence& seq) const {
  ad::Tape tape;
  const BoundParams bound = bind(params_, tape, true);
  const SkeletonSequence* one[] = {&seq};
  return frame_features(tape.constant(stack_input(one, nullptr)), bound).value();
}

// ---------------------------------------------------------------------------

TextEncoder::TextEncoder(const TextEncoderConfig& config, std::uint64_t seed) : config_(config) {
  if (config.width < 1 || config.d_out < 1 || config.max_tokens < 1) {
    throw ConfigError("text encoder dimensions must be positive");
  }
  Rng rng(seed);
  const int vocab = synth::Vocabulary::instance().size();
  token_table_ = params_.add("text.tokens", init_weight(rng, 1, vocab * config.width)
                                                .reshaped(vocab, config.width));
  positions_ = params_.add("text.positions", init_weight(rng, 1, config.max_tokens * config.width, 0.3)
                                                 .reshaped(config.max_tokens, config.width));
  mix_weight_ = params_.add("text.mix.weight", init_weight(rng, config.width, config.width));
  mix_bias_ = params_.add("text.mix.bias", Mat::Zero(1, config.width));
  out_weight_ = params_.add("text.out.weight", init_weight(rng, config.width, config.d_out));
  out_bias_ = params_.add("text.out.bias", Mat::Zero(1, config.d_out));
}

ad::Var TextEncoder::embed(ad::Tape& tape, const BoundParams& bound,
                           const std::vector<TextPrompt>& prompts) const {
  if (prompts.empty()) throw DegenerateInput("text encoder: empty prompt list");
  const auto& vocab = synth::Vocabulary::instance();
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<int> lengths;
  for (const TextPrompt& p : prompts) {
    const std::vector<int> ids = vocab.tokenize(p.text);
    if (ids.empty()) throw DegenerateInput("text encoder: prompt has no tokens");
    if (static_cast<int>(ids.size()) > config_.max_tokens) {
      throw DimensionMismatch("prompt `" + p.text + "` exceeds " +
                              std::to_string(config_.max_tokens) + " tokens");
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      tokens.push_back(ids[i]);
      positions.push_back(static_cast<int>(i));
    }
    lengths.push_back(static_cast<int>(ids.size()));
  }
  (void)tape;
  const ad::Var h0 = ad::add(ad::gather_rows(bound[token_table_], tokens),
                             ad::gather_rows(bound[positions_], positions));
  const ad::Var h1 = ad::tanh(ad::add_row(ad::matmul(h0, bound[mix_weight_]), bound[mix_bias_]));
  const ad::Var pooled = ad::segment_mean(h1, lengths);
  const ad::Var out = ad::add_row(ad::matmul(pooled, bound[out_weight_]), bound[out_bias_]);
  return ad::normalize_rows(out);
}

Mat TextEncoder::embed(const std::vector<TextPrompt>& prompts) const {
  ad::Tape tape;
  const BoundParams bound = bind(params_, tape, true);
  return embed(tape, bound, prompts).value();
}

Embedding TextEncoder::encode(const TextPrompt& prompt) const {
  return Embedding::unit(embed(std::vector<TextPrompt>{prompt}).row(0).transpose());
}

// ---------------------------------------------------------------------------

ClassifierHead::ClassifierHead(int d_in, int num_classes, std::uint64_t seed)
    : d_in_(d_in), num_classes_(num_classes) {
  if (d_in < 1 || num_classes < 1) throw ConfigError("classifier head dimensions must be positive");
  Rng rng(seed);
  params_.add("head.weight", init_weight(rng, d_in, num_classes));
  params_.add("head.bias", Mat::Zero(1, num_classes));
}

ad::Var ClassifierHead::logits(const ad::Var& features, const BoundParams& bound) const {
  if (features.cols() != d_in_) {
    throw DimensionMismatch("classifier head expects " + std::to_string(d_in_) +
                            " features, got " + std::to_string(features.cols()));
  }
  return ad::add_row(ad::matmul(features, bound[0]), bound[1]);
}

Vec classify_skeleton(const ClassifierHead& head, const SkeletonEncoder& encoder,
                      const SkeletonSequence& seq) {
  ad::Tape tape;
  const BoundParams enc = bind(encoder.params(), tape, true);
  const BoundParams hb = bind(head.params(), tape, true);
  const SkeletonSequence* one[] = {&seq};
  std::vector<int> lengths;
  const ad::Var x = tape.constant(encoder.stack_input(one, &lengths));
  return head.logits(encoder.pooled(x, lengths, enc), hb).value().row(0).transpose();
}

}  // namespace ski
