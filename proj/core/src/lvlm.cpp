#include "ski/lvlm.hpp"

#include "ski/error.hpp"
#include "ski/losses.hpp"
#include "ski/rng.hpp"
#include "ski/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace ski::lvlm {

namespace {

const synth::Vocabulary& vocab() { return synth::Vocabulary::instance(); }

std::string layer_name(int layer, const std::string& what) {
  return "lm.layer" + std::to_string(layer) + "." + what;
}

}  // namespace

// ---------------------------------------------------------------------------

ToyCausalLM::ToyCausalLM(const LmConfig& config) : config_(config) {
  if (config.width < 1 || config.layers < 0 || config.heads < 1 || config.mlp_width < 1 ||
      config.max_positions < 1) {
    throw ConfigError("toy LM: width, heads, mlp_width and max_positions must be positive");
  }
  if (config.width % config.heads != 0) {
    throw ConfigError("toy LM: width " + std::to_string(config.width) +
                      " is not divisible by heads " + std::to_string(config.heads));
  }
  vocab_size_ = vocab().size();
  const int k = config.width;
  const int dh = k / config.heads;
  Rng rng(config.seed);
  Mat table(vocab_size_, k);
  for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = rng.normal();
  tokens_ = params_.add("lm.tokens", table, false);
  Mat pos(config.max_positions, k);
  for (Eigen::Index i = 0; i < pos.size(); ++i) pos.data()[i] = 0.3 * rng.normal();
  positions_ = params_.add("lm.positions", pos, false);
  for (int l = 0; l < config.layers; ++l) {
    Block b;
    for (int h = 0; h < config.heads; ++h) {
      const std::string hs = "head" + std::to_string(h);
      b.wq.push_back(params_.add(layer_name(l, hs + ".q"), init_weight(rng, k, dh), false));
      b.wk.push_back(params_.add(layer_name(l, hs + ".k"), init_weight(rng, k, dh), false));
      b.wv.push_back(params_.add(layer_name(l, hs + ".v"), init_weight(rng, k, dh), false));
    }
    b.wo = params_.add(layer_name(l, "attn_out"), init_weight(rng, k, k, 0.5), false);
    b.w1 = params_.add(layer_name(l, "mlp.in.weight"), init_weight(rng, k, config.mlp_width), false);
    b.b1 = params_.add(layer_name(l, "mlp.in.bias"), Mat::Zero(1, config.mlp_width), false);
    b.w2 = params_.add(layer_name(l, "mlp.out.weight"),
                       init_weight(rng, config.mlp_width, k, 0.5), false);
    blocks_.push_back(std::move(b));
  }
  out_ = params_.add("lm.out", init_weight(rng, k, vocab_size_, 2.0), false);
}

Mat ToyCausalLM::token_embeddings(const std::vector<int>& ids) const {
  Mat m(static_cast<Eigen::Index>(ids.size()), config_.width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab_size_) {
      throw ContractViolation("toy LM: token id " + std::to_string(ids[i]) + " out of range");
    }
    m.row(static_cast<Eigen::Index>(i)) = params_[tokens_].value.row(ids[i]);
  }
  return m;
}

ad::Var ToyCausalLM::token_embeddings(const BoundParams& bound, const std::vector<int>& ids) const {
  for (int id : ids) {
    if (id < 0 || id >= vocab_size_) {
      throw ContractViolation("toy LM: token id " + std::to_string(id) + " out of range");
    }
  }
  return ad::gather_rows(bound[tokens_], ids);
}

ad::Var ToyCausalLM::forward(const ad::Var& inputs, const BoundParams& bound) const {
  if (inputs.cols() != config_.width) {
    throw DimensionMismatch("toy LM expects width " + std::to_string(config_.width) + ", got " +
                            std::to_string(inputs.cols()));
  }
  const Eigen::Index len = inputs.rows();
  if (len < 1 || len > config_.max_positions) {
    throw DimensionMismatch("toy LM: sequence length " + std::to_string(len) +
                            " outside [1, " + std::to_string(config_.max_positions) + "]");
  }
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(config_.width / config_.heads));
  ad::Var x = ad::add(inputs, ad::slice_rows(bound[positions_], 0, len));
  for (const Block& b : blocks_) {
    std::vector<ad::Var> heads;
    for (std::size_t h = 0; h < b.wq.size(); ++h) {
      const ad::Var q = ad::matmul(x, bound[b.wq[h]]);
      const ad::Var k = ad::matmul(x, bound[b.wk[h]]);
      const ad::Var v = ad::matmul(x, bound[b.wv[h]]);
      const ad::Var attn = ad::causal_softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt_dh));
      heads.push_back(ad::matmul(attn, v));
    }
    x = ad::add(x, ad::matmul(ad::concat_cols(heads), bound[b.wo]));
    const ad::Var hidden = ad::tanh(ad::add_row(ad::matmul(x, bound[b.w1]), bound[b.b1]));
    x = ad::add(x, ad::matmul(hidden, bound[b.w2]));
  }
  return ad::matmul(ad::standardize_rows(x), bound[out_]);
}

Mat ToyCausalLM::logits(const Mat& inputs) const {
  ad::Tape tape;
  return forward(tape.constant(inputs), bind_frozen(tape)).value();
}

// ---------------------------------------------------------------------------

std::string to_string(Modality modality) {
  switch (modality) {
    case Modality::kText: return "text";
    case Modality::kVisual: return "visual";
    case Modality::kSkeleton: return "skeleton";
  }
  return "?";
}

void ProjectorConfig::validate() const {
  if (d_v < 1 || d_s < 1 || n_v < 1 || n_s < 1 || k < 1) {
    throw ConfigError("projector config: d_v, d_s, n_v, n_s and K must all be positive");
  }
}

Projector::Projector(int d_in, int k, ParameterSet& params, const std::string& name,
                     std::uint64_t seed)
    : d_in_(d_in), k_(k) {
  Rng rng(seed);
  index_ = params.add(name, init_weight(rng, d_in, k));
}

ad::Var Projector::apply(const ad::Var& tokens, const BoundParams& bound) const {
  if (tokens.cols() != d_in_) {
    throw DimensionMismatch("projector expects " + std::to_string(d_in_) +
                            "-dim tokens, got " + std::to_string(tokens.cols()));
  }
  return ad::matmul(tokens, bound[index_]);
}

Projectors::Projectors(const ProjectorConfig& config, bool with_skeleton, std::uint64_t seed)
    : config_(config) {
  config.validate();
  visual_ = Projector(config.d_v, config.k, params_, "projector.visual.weight", mix_seed(seed, 301));
  if (with_skeleton) {
    skeleton_ = Projector(config.d_s, config.k, params_, "projector.skeleton.weight",
                          mix_seed(seed, 302));
  }
}

const Projector& Projectors::skeleton() const {
  if (!skeleton_) throw ContractViolation("no skeleton projector in this model");
  return *skeleton_;
}

TokenBlock Projectors::project_visual(const Mat& tokens) const {
  return project(params_[visual_.index()].value, tokens, Modality::kVisual);
}

TokenBlock Projectors::project_skeleton(const Mat& tokens) const {
  return project(params_[skeleton().index()].value, tokens, Modality::kSkeleton);
}

TokenBlock project(const Mat& weight, const Mat& tokens, Modality modality) {
  if (tokens.cols() != weight.rows()) {
    throw DimensionMismatch("projector expects " + std::to_string(weight.rows()) +
                            "-dim tokens, got " + std::to_string(tokens.cols()));
  }
  return TokenBlock{tokens * weight, modality};
}

Mat extract_visual_tokens(const VideoEncoder& video, const VideoClip& clip) {
  return video.frame_tokens(clip);
}

Mat extract_skeleton_tokens(const SkeletonEncoder& skeleton, const SkeletonSequence& seq) {
  return skeleton.frame_tokens(seq);
}

// ---------------------------------------------------------------------------

const Span* AssembledPrompt::span(const std::string& name) const {
  for (const Span& s : spans) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

namespace {

// Graph-level assembly shared by training, scoring and generation.
struct GraphPrompt {
  ad::Var tokens;
  std::vector<Span> spans;
};

GraphPrompt assemble(const ToyCausalLM& lm, const BoundParams& lm_bound, const ad::Var& q_t,
                     const ad::Var& q_v, const ad::Var* q_s) {
  const int k = lm.width();
  for (const ad::Var* v : {&q_t, &q_v, q_s}) {
    if (v && v->cols() != k) {
      throw DimensionMismatch("prompt block has width " + std::to_string(v->cols()) +
                              ", LM expects " + std::to_string(k));
    }
    if (v && !v->value().allFinite()) throw DegenerateInput("prompt block has non-finite entries");
  }
  std::vector<ad::Var> parts;
  std::vector<Span> spans;
  int at = 0;
  auto push = [&](const std::string& name, const ad::Var& v) {
    parts.push_back(v);
    spans.push_back(Span{name, at, static_cast<int>(v.rows())});
    at += static_cast<int>(v.rows());
  };
  push("user", lm.token_embeddings(lm_bound, {vocab().id("user:")}));
  push("query", q_t);
  push("visual", q_v);
  if (q_s) push("skeleton", *q_s);
  push("assistant", lm.token_embeddings(lm_bound, {vocab().id("assistant:")}));
  return GraphPrompt{ad::concat_rows(parts), std::move(spans)};
}

// Prompt followed by the caption (teacher forcing). Returns the response
// targets and mask aligned with the logits rows.
struct ForcedSequence {
  ad::Var inputs;
  std::vector<int> targets;
  std::vector<char> mask;
};

ForcedSequence teacher_forced(const ToyCausalLM& lm, const BoundParams& lm_bound,
                              const GraphPrompt& prompt, const std::vector<int>& caption) {
  const int p = static_cast<int>(prompt.tokens.rows());
  const int n = static_cast<int>(caption.size());
  ForcedSequence s;
  s.inputs = n > 0 ? ad::concat_rows(std::vector<ad::Var>{
                         prompt.tokens, lm.token_embeddings(lm_bound, caption)})
                   : prompt.tokens;
  s.targets.assign(static_cast<std::size_t>(p + n), 0);
  s.mask.assign(static_cast<std::size_t>(p + n), 0);
  // Position p-1 ("assistant:") predicts caption[0]; the last caption token
  // predicts <eos>.
  for (int i = 0; i <= n; ++i) {
    const auto row = static_cast<std::size_t>(p - 1 + i);
    s.targets[row] = i < n ? caption[static_cast<std::size_t>(i)] : vocab().eos();
    s.mask[row] = 1;
  }
  return s;
}

ad::Var query_block(const ToyCausalLM& lm, const BoundParams& lm_bound, const std::string& query) {
  const auto ids = vocab().tokenize(query);
  if (ids.empty()) throw ContractViolation("LVLM query is empty");
  return lm.token_embeddings(lm_bound, ids);
}

bool uses_skeleton(const Projectors& projectors, const CaptionExample& ex, bool use_skeleton) {
  return use_skeleton && projectors.has_skeleton() && ex.skeleton.has_value();
}

}  // namespace

AssembledPrompt assemble_prompt(const ToyCausalLM& lm, const TokenBlock& q_t, const TokenBlock& q_v,
                                const TokenBlock* q_s) {
  ad::Tape tape;
  const BoundParams lm_bound = lm.bind_frozen(tape);
  const ad::Var t = tape.constant(q_t.tokens);
  const ad::Var v = tape.constant(q_v.tokens);
  std::optional<ad::Var> s;
  if (q_s) s = tape.constant(q_s->tokens);
  GraphPrompt g = assemble(lm, lm_bound, t, v, s ? &*s : nullptr);
  return AssembledPrompt{g.tokens.value(), std::move(g.spans)};
}

// ---------------------------------------------------------------------------

void LvlmConfig::validate() const {
  if (epochs < 0) throw ConfigError("lvlm.epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("lvlm.batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lvlm.lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("lvlm.momentum must lie in [0, 1)");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("lvlm.holdout_fraction must lie in (0, 1)");
  }
  if (max_len < 1) throw ConfigError("lvlm.max_len must be at least 1");
}

LvlmConfig LvlmConfig::from_kv(const KvConfig& raw) {
  const KvConfig kv = raw.merged(raw.scoped("lvlm"));
  LvlmConfig c;
  c.epochs = kv.get_int("epochs", c.epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.lr = kv.get_double("lr", c.lr);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.seed = kv.get_u64("seed", c.seed);
  c.use_skeleton = kv.get_bool("use_skeleton", c.use_skeleton);
  c.holdout_fraction = kv.get_double("holdout_fraction", c.holdout_fraction);
  c.max_len = kv.get_int("max_len", c.max_len);
  c.query = kv.get("query", c.query);
  c.validate();
  return c;
}

KvConfig LvlmConfig::to_kv() const {
  KvConfig kv;
  kv.set("lvlm.epochs", std::to_string(epochs));
  kv.set("lvlm.batch_size", std::to_string(batch_size));
  kv.set("lvlm.lr", format_double(lr));
  kv.set("lvlm.momentum", format_double(momentum));
  kv.set("lvlm.seed", std::to_string(seed));
  kv.set("lvlm.use_skeleton", use_skeleton ? "true" : "false");
  kv.set("lvlm.holdout_fraction", format_double(holdout_fraction));
  kv.set("lvlm.max_len", std::to_string(max_len));
  kv.set("lvlm.query", query);
  return kv;
}

CaptionSplit make_caption_split(const synth::Dataset& dataset, const VideoEncoder& video,
                                const SkeletonEncoder* skeleton, double holdout_fraction) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction must lie in (0, 1)");
  }
  const int per_class = dataset.config.samples_per_class;
  const int held = std::max(1, static_cast<int>(std::lround(holdout_fraction * per_class)));
  if (held >= per_class) throw ConfigError("holdout leaves no training captions");
  CaptionSplit split;
  for (const synth::Triplet& tr : dataset.triplets) {
    CaptionExample ex;
    ex.visual = extract_visual_tokens(video, tr.video);
    if (skeleton) ex.skeleton = extract_skeleton_tokens(*skeleton, tr.skeleton);
    ex.caption = vocab().tokenize(tr.caption);
    ex.class_id = tr.class_id();
    (tr.sample_index >= per_class - held ? split.heldout : split.train).push_back(std::move(ex));
  }
  return split;
}

CaptionScore teacher_forced_score(const ToyCausalLM& lm, const Projectors& projectors,
                                  const std::vector<CaptionExample>& examples,
                                  const std::string& query, bool use_skeleton) {
  CaptionScore score;
  double nll_sum = 0.0;
  int correct = 0;
  for (const CaptionExample& ex : examples) {
    ad::Tape tape;
    const BoundParams lm_bound = lm.bind_frozen(tape);
    const BoundParams pb = bind(projectors.params(), tape, true);
    const ad::Var q_v = projectors.visual().apply(tape.constant(ex.visual), pb);
    std::optional<ad::Var> q_s;
    if (uses_skeleton(projectors, ex, use_skeleton)) {
      q_s = projectors.skeleton().apply(tape.constant(*ex.skeleton), pb);
    }
    const GraphPrompt prompt =
        assemble(lm, lm_bound, query_block(lm, lm_bound, query), q_v, q_s ? &*q_s : nullptr);
    const ForcedSequence seq = teacher_forced(lm, lm_bound, prompt, ex.caption);
    const Mat logits = lm.forward(seq.inputs, lm_bound).value();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (!seq.mask[static_cast<std::size_t>(r)]) continue;
      const Eigen::RowVectorXd row = logits.row(r);
      const double m = row.maxCoeff();
      const double lse = m + std::log((row.array() - m).exp().sum());
      const int target = seq.targets[static_cast<std::size_t>(r)];
      nll_sum += lse - row(target);
      Eigen::Index best = 0;
      row.maxCoeff(&best);
      if (static_cast<int>(best) == target) ++correct;
      ++score.tokens;
    }
  }
  if (score.tokens > 0) {
    score.nll = nll_sum / score.tokens;
    score.next_token_accuracy = static_cast<double>(correct) / score.tokens;
  }
  return score;
}

void train_projectors(const ToyCausalLM& lm, Projectors& projectors, const CaptionSplit& data,
                      const LvlmConfig& cfg, const VideoEncoder& video,
                      const SkeletonEncoder* skeleton, RunRecord* record) {
  cfg.validate();
  if (cfg.use_skeleton && !projectors.has_skeleton()) {
    throw ContractViolation("use_skeleton is set but the model has no skeleton projector");
  }
  if (data.train.empty()) throw ContractViolation("no training captions");
  const std::uint64_t lm_sum = lm.checksum();
  const std::uint64_t video_sum = video.params().checksum();
  const std::uint64_t skeleton_sum = skeleton ? skeleton->params().checksum() : 0;
  auto verify_frozen = [&](int epoch) {
    if (lm.checksum() != lm_sum) {
      throw ContractViolation("toy LM parameters changed during projector training (epoch " +
                              std::to_string(epoch) + ")");
    }
    if (video.params().checksum() != video_sum) {
      throw ContractViolation("video encoder changed during projector training");
    }
    if (skeleton && skeleton->params().checksum() != skeleton_sum) {
      throw ContractViolation("skeleton encoder changed during projector training");
    }
  };

  const auto start = std::chrono::steady_clock::now();
  const int n = static_cast<int>(data.train.size());
  const int per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(per_epoch) * std::max(cfg.epochs, 1);
  Sgd sgd(cfg.momentum);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg.seed, 0x11F00000ULL + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<int>(order));
    double loss_sum = 0.0;
    for (int b = 0; b < per_epoch; ++b) {
      const int lo = b * cfg.batch_size;
      const int hi = std::min(n, lo + cfg.batch_size);
      ad::Tape tape;
      const BoundParams lm_bound = lm.bind_frozen(tape);
      const BoundParams pb = bind(projectors.params(), tape);
      const ad::Var query = query_block(lm, lm_bound, cfg.query);
      std::vector<ad::Var> losses;
      for (int i = lo; i < hi; ++i) {
        const CaptionExample& ex = data.train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        const ad::Var q_v = projectors.visual().apply(tape.constant(ex.visual), pb);
        std::optional<ad::Var> q_s;
        if (uses_skeleton(projectors, ex, cfg.use_skeleton)) {
          q_s = projectors.skeleton().apply(tape.constant(*ex.skeleton), pb);
        }
        const GraphPrompt prompt = assemble(lm, lm_bound, query, q_v, q_s ? &*q_s : nullptr);
        const ForcedSequence seq = teacher_forced(lm, lm_bound, prompt, ex.caption);
        losses.push_back(
            graph::autoregressive_lm_loss(lm.forward(seq.inputs, lm_bound), seq.targets, seq.mask));
      }
      ad::Var loss = losses.front();
      for (std::size_t i = 1; i < losses.size(); ++i) loss = ad::add(loss, losses[i]);
      loss = ad::scale(loss, 1.0 / static_cast<double>(losses.size()));
      if (!std::isfinite(loss.scalar())) {
        throw ContractViolation("lvlm: non-finite loss at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      const double rate = cfg.lr * schedule_factor(Schedule::kCosine, step / total_steps);
      sgd.step(projectors.params(), collect_gradients(projectors.params(), pb), rate);
      ++step;
      loss_sum += loss.scalar();
    }
    verify_frozen(epoch);
    if (record) record->add_epoch("lvlm", epoch, {{"loss", loss_sum / per_epoch}});
  }
  verify_frozen(cfg.epochs);
  if (record) {
    record->add_timing("lvlm",
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
}

std::vector<int> generate_caption(const ToyCausalLM& lm, const Projector& visual,
                                  const ParameterSet& projector_params, const Mat& visual_tokens,
                                  const std::string& query, int max_len) {
  if (max_len < 1) throw ContractViolation("generate_caption: max_len must be at least 1");
  std::vector<int> out;
  ad::Tape tape;
  const BoundParams lm_bound = lm.bind_frozen(tape);
  const BoundParams pb = bind(projector_params, tape, true);
  const GraphPrompt prompt = assemble(lm, lm_bound, query_block(lm, lm_bound, query),
                                      visual.apply(tape.constant(visual_tokens), pb), nullptr);
  Mat seq = prompt.tokens.value();
  const int eos = vocab().eos();
  while (static_cast<int>(out.size()) < max_len && seq.rows() < lm.config().max_positions) {
    const Mat logits = lm.logits(seq);
    Eigen::Index next = 0;
    logits.row(logits.rows() - 1).maxCoeff(&next);
    if (static_cast<int>(next) == eos) break;
    out.push_back(static_cast<int>(next));
    Mat grown(seq.rows() + 1, seq.cols());
    grown << seq, lm.token_embeddings({static_cast<int>(next)});
    seq = std::move(grown);
  }
  return out;
}

std::string generate_caption_text(const ToyCausalLM& lm, const Projectors& projectors,
                                  const VideoEncoder& video, const VideoClip& clip,
                                  const std::string& query, int max_len) {
  return vocab().detokenize(generate_caption(lm, projectors.visual(), projectors.params(),
                                             extract_visual_tokens(video, clip), query, max_len));
}

}  // namespace ski::lvlm
