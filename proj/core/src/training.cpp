#include "ski/training.hpp"

#include "ski/binary_io.hpp"
#include "ski/error.hpp"
#include "ski/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace ski {

double schedule_factor(Schedule schedule, double progress) {
  if (schedule == Schedule::kConstant) return 1.0;
  const double p = std::clamp(progress, 0.0, 1.0);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

// ---------------------------------------------------------------------------
// Configuration

ModelConfig ModelConfig::from_kv(const KvConfig& raw) {
  const KvConfig kv = raw.scoped("model");
  ModelConfig m;
  m.video = EncoderConfig::from_kv(kv.scoped("video"));
  m.skeleton = EncoderConfig::from_kv(kv.scoped("skeleton"));
  m.text.width = kv.get_int("text.width", m.text.width);
  m.text.d_out = kv.get_int("text.d_out", m.video.d_out);
  m.text.max_tokens = kv.get_int("text.max_tokens", m.text.max_tokens);
  if (m.text.d_out != m.video.d_out || m.text.d_out != m.skeleton.d_out) {
    throw ConfigError("model.text.d_out must equal the video and skeleton d_out");
  }
  return m;
}

KvConfig ModelConfig::to_kv() const {
  KvConfig kv = video.to_kv().prefixed("model.video").merged(skeleton.to_kv().prefixed("model.skeleton"));
  kv.set("model.text.width", std::to_string(text.width));
  kv.set("model.text.d_out", std::to_string(text.d_out));
  kv.set("model.text.max_tokens", std::to_string(text.max_tokens));
  return kv;
}

void TrainConfig::validate() const {
  for (const auto& [name, v] : {std::pair{"epochs_pretrain", epochs_pretrain},
                                std::pair{"epochs_align", epochs_align},
                                std::pair{"epochs_finetune", epochs_finetune},
                                std::pair{"epochs_scd", epochs_scd},
                                std::pair{"epochs_baseline", epochs_baseline}}) {
    if (v < 0) throw ConfigError(std::string("train.") + name + " must be >= 0");
  }
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  for (const auto& [name, v] :
       {std::pair{"lr_pretrain", lr_pretrain}, std::pair{"lr_align", lr_align},
        std::pair{"lr_finetune", lr_finetune}, std::pair{"lr_scd", lr_scd},
        std::pair{"lr_baseline", lr_baseline}}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("train.") + name + " must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  loss.validate();
}

TrainConfig TrainConfig::from_kv(const KvConfig& raw) {
  const KvConfig kv = raw.merged(raw.scoped("train"));
  TrainConfig c;
  c.epochs_pretrain = kv.get_int("epochs_pretrain", c.epochs_pretrain);
  c.epochs_align = kv.get_int("epochs_align", c.epochs_align);
  c.epochs_finetune = kv.get_int("epochs_finetune", c.epochs_finetune);
  c.epochs_scd = kv.get_int("epochs_scd", c.epochs_scd);
  c.epochs_baseline = kv.get_int("epochs_baseline", c.epochs_baseline);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  if (kv.has("lr")) {
    const double lr = kv.get_double("lr");
    c.lr_pretrain = c.lr_align = c.lr_finetune = c.lr_scd = c.lr_baseline = lr;
  }
  c.lr_pretrain = kv.get_double("lr_pretrain", c.lr_pretrain);
  c.lr_align = kv.get_double("lr_align", c.lr_align);
  c.lr_finetune = kv.get_double("lr_finetune", c.lr_finetune);
  c.lr_scd = kv.get_double("lr_scd", c.lr_scd);
  c.lr_baseline = kv.get_double("lr_baseline", c.lr_baseline);
  if (kv.has("schedule")) {
    const std::string s = kv.get("schedule");
    if (s == "cosine") c.schedule = Schedule::kCosine;
    else if (s == "constant") c.schedule = Schedule::kConstant;
    else throw ConfigError("train.schedule must be cosine or constant, got `" + s + "`");
  }
  c.momentum = kv.get_double("momentum", c.momentum);
  c.seed = kv.get_u64("seed", c.seed);
  c.loss = LossConfig::from_kv(raw.scoped("loss"));
  c.freeze_skeleton_text = kv.get_bool("freeze_skeleton_text", c.freeze_skeleton_text);
  c.freeze_video_text = kv.get_bool("freeze_video_text", c.freeze_video_text);
  c.pretrain_skeletonclip = kv.get_bool("pretrain_skeletonclip", c.pretrain_skeletonclip);
  c.pretrain_videoclip = kv.get_bool("pretrain_videoclip", c.pretrain_videoclip);
  c.validate();
  return c;
}

KvConfig TrainConfig::to_kv() const {
  KvConfig kv;
  kv.set("train.epochs_pretrain", std::to_string(epochs_pretrain));
  kv.set("train.epochs_align", std::to_string(epochs_align));
  kv.set("train.epochs_finetune", std::to_string(epochs_finetune));
  kv.set("train.epochs_scd", std::to_string(epochs_scd));
  kv.set("train.epochs_baseline", std::to_string(epochs_baseline));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.lr_pretrain", format_double(lr_pretrain));
  kv.set("train.lr_align", format_double(lr_align));
  kv.set("train.lr_finetune", format_double(lr_finetune));
  kv.set("train.lr_scd", format_double(lr_scd));
  kv.set("train.lr_baseline", format_double(lr_baseline));
  kv.set("train.schedule", schedule == Schedule::kCosine ? "cosine" : "constant");
  kv.set("train.momentum", format_double(momentum));
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.freeze_skeleton_text", freeze_skeleton_text ? "true" : "false");
  kv.set("train.freeze_video_text", freeze_video_text ? "true" : "false");
  kv.set("train.pretrain_skeletonclip", pretrain_skeletonclip ? "true" : "false");
  kv.set("train.pretrain_videoclip", pretrain_videoclip ? "true" : "false");
  return kv.merged(loss.to_kv().prefixed("loss"));
}

// ---------------------------------------------------------------------------
// Optimizer

void Sgd::step(ParameterSet& params, const std::vector<Mat>& grads, double lr) {
  if (grads.size() != params.size()) {
    throw DimensionMismatch("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                            std::to_string(params.size()) + " parameter arrays");
  }
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params.items()) velocity_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!p.trainable) continue;
    const Mat& g = grads[i];
    if (g.rows() != p.value.rows() || g.cols() != p.value.cols()) {
      throw DimensionMismatch("optimizer: gradient for `" + p.name + "` has the wrong shape");
    }
    if (!g.allFinite()) throw ContractViolation("non-finite gradient for parameter `" + p.name + "`");
    velocity_[i] = momentum_ * velocity_[i] + g;
    p.value -= lr * velocity_[i];
  }
}

// ---------------------------------------------------------------------------
// RunRecord

using ordered_json = nlohmann::ordered_json;

double EpochRecord::field(const std::string& name) const {
  for (const auto& [k, v] : fields) {
    if (k == name) return v;
  }
  throw ContractViolation("epoch record has no field `" + name + "`");
}

RunRecord::RunRecord(std::string procedure, std::string fingerprint, std::uint64_t seed)
    : procedure_(std::move(procedure)), fingerprint_(std::move(fingerprint)), seed_(seed) {}

void RunRecord::add_epoch(const std::string& phase, int epoch,
                          std::vector<std::pair<std::string, double>> fields) {
  epochs_.push_back(EpochRecord{phase, epoch, std::move(fields)});
}

void RunRecord::add_metric(const std::string& name, double value) {
  for (auto& [k, v] : metrics_) {
    if (k == name) {
      v = value;
      return;
    }
  }
  metrics_.emplace_back(name, value);
}

void RunRecord::add_timing(const std::string& phase, double seconds) {
  timings_.emplace_back(phase, seconds);
}

double RunRecord::metric(const std::string& name) const {
  for (const auto& [k, v] : metrics_) {
    if (k == name) return v;
  }
  throw ContractViolation("run record has no metric `" + name + "`");
}

bool RunRecord::has_metric(const std::string& name) const {
  return std::any_of(metrics_.begin(), metrics_.end(), [&](const auto& m) { return m.first == name; });
}

std::vector<EpochRecord> RunRecord::phase(const std::string& name) const {
  std::vector<EpochRecord> out;
  for (const auto& e : epochs_) {
    if (e.phase == name) out.push_back(e);
  }
  return out;
}

std::string RunRecord::to_jsonl() const {
  std::string out;
  ordered_json header;
  header["type"] = "header";
  header["procedure"] = procedure_;
  header["fingerprint"] = fingerprint_;
  header["seed"] = seed_;
  out += header.dump() + "\n";
  for (const auto& e : epochs_) {
    ordered_json line;
    line["type"] = "epoch";
    line["phase"] = e.phase;
    line["epoch"] = e.epoch;
    for (const auto& [k, v] : e.fields) line[k] = v;
    out += line.dump() + "\n";
  }
  ordered_json m;
  m["type"] = "metrics";
  for (const auto& [k, v] : metrics_) m[k] = v;
  out += m.dump() + "\n";
  return out;
}

std::string RunRecord::timings_jsonl() const {
  std::string out;
  for (const auto& [phase, s] : timings_) {
    ordered_json line;
    line["phase"] = phase;
    line["seconds"] = s;
    out += line.dump() + "\n";
  }
  return out;
}

RunRecord RunRecord::parse(const std::string& text, const std::string& source) {
  RunRecord r;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  auto fail = [&](const std::string& why) {
    throw FormatError(source + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      fail(std::string("not valid JSON (") + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) fail("missing `type`");
    const std::string type = j["type"];
    if (type == "header") {
      if (!j.contains("procedure") || !j.contains("fingerprint") || !j.contains("seed")) {
        fail("incomplete header");
      }
      r.procedure_ = j["procedure"].get<std::string>();
      r.fingerprint_ = j["fingerprint"].get<std::string>();
      r.seed_ = j["seed"].get<std::uint64_t>();
      saw_header = true;
    } else if (type == "epoch") {
      if (!j.contains("phase") || !j.contains("epoch")) fail("epoch line without phase/epoch");
      EpochRecord e;
      e.phase = j["phase"].get<std::string>();
      e.epoch = j["epoch"].get<int>();
      for (const auto& [k, v] : j.items()) {
        if (k == "type" || k == "phase" || k == "epoch") continue;
        if (!v.is_number()) fail("field `" + k + "` is not numeric");
        e.fields.emplace_back(k, v.get<double>());
      }
      r.epochs_.push_back(std::move(e));
    } else if (type == "metrics") {
      for (const auto& [k, v] : j.items()) {
        if (k == "type") continue;
        if (!v.is_number()) fail("metric `" + k + "` is not numeric");
        r.metrics_.emplace_back(k, v.get<double>());
      }
    } else {
      fail("unknown line type `" + type + "`");
    }
  }
  if (!saw_header) throw FormatError(source + ": no header line");
  return r;
}

void RunRecord::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << to_jsonl();
}

RunRecord RunRecord::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

// ---------------------------------------------------------------------------
// Data plumbing

int TrainingSet::target(int class_id) const {
  const auto it = std::lower_bound(class_ids.begin(), class_ids.end(), class_id);
  if (it == class_ids.end() || *it != class_id) {
    throw ContractViolation("class " + std::to_string(class_id) + " is not in the training set");
  }
  return static_cast<int>(it - class_ids.begin());
}

void TrainingSet::check_no_leakage() const {
  for (const synth::Triplet* t : samples) {
    if (!split.is_seen(t->class_id())) {
      throw ContractViolation("split leakage: training sample of class " +
                              std::to_string(t->class_id()) + " is not a seen class");
    }
    (void)target(t->class_id());
  }
  if (samples.empty()) throw DegenerateInput("training set is empty");
}

TrainingSet make_training_set(const synth::Dataset& dataset) {
  TrainingSet set;
  set.split = dataset.split;
  set.class_ids = dataset.split.seen;
  std::sort(set.class_ids.begin(), set.class_ids.end());
  set.prompts = dataset.class_prompts(set.class_ids);
  set.samples = dataset.samples_of(set.class_ids);
  return set;
}

std::vector<std::vector<int>> class_balanced_batches(const TrainingSet& set, int batch_size,
                                                     std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw ContractViolation("batch size must be positive");
  Rng rng(mix_seed(seed, 0xBA7C0000ULL + static_cast<std::uint64_t>(epoch)));
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    by_class[set.samples[i]->class_id()].push_back(static_cast<int>(i));
  }
  std::vector<std::vector<int>> queues;
  for (auto& [cls, idx] : by_class) {
    rng.shuffle(std::span<int>(idx));
    queues.push_back(idx);
  }
  std::vector<int> order;
  std::vector<std::size_t> pos(queues.size(), 0);
  std::vector<int> classes(queues.size());
  for (std::size_t k = 0; k < classes.size(); ++k) classes[k] = static_cast<int>(k);
  while (order.size() < set.samples.size()) {
    rng.shuffle(std::span<int>(classes));
    for (int k : classes) {
      auto& q = queues[static_cast<std::size_t>(k)];
      auto& p = pos[static_cast<std::size_t>(k)];
      if (p < q.size()) order.push_back(q[p++]);
    }
  }
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
  }
  // A trailing single-sample batch has no in-batch negatives; fold it in.
  if (batches.size() > 1 && batches.back().size() < 2) {
    const auto last = batches.back();
    batches.pop_back();
    batches.back().insert(batches.back().end(), last.begin(), last.end());
  }
  return batches;
}

namespace {

constexpr std::uint64_t kVideoInit = 101;
constexpr std::uint64_t kSkeletonInit = 102;
constexpr std::uint64_t kTextInit = 103;
constexpr std::uint64_t kHeadInit = 104;
constexpr std::uint64_t kProjectionInit = 105;

}  // namespace

VideoClipModel make_videoclip(const ModelConfig& model, const synth::DatasetConfig& data,
                              std::uint64_t seed) {
  return VideoClipModel{
      VideoEncoder(data.channels, data.height, data.width, model.video, mix_seed(seed, kVideoInit)),
      TextEncoder(model.text, mix_seed(seed, kTextInit))};
}

SkeletonClipModel make_skeletonclip(const ModelConfig& model, const synth::DatasetConfig& data,
                                    std::uint64_t seed) {
  return SkeletonClipModel{SkeletonEncoder(data.joints, model.skeleton, mix_seed(seed, kSkeletonInit)),
                           TextEncoder(model.text, mix_seed(seed, kTextInit))};
}

ClassifierHead make_head(const ModelConfig& model, int num_classes, std::uint64_t seed) {
  return ClassifierHead(model.skeleton.d_out, num_classes, mix_seed(seed, kHeadInit));
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct Trainee {
  ParameterSet* params;
  bool as_constants = false;
  Sgd sgd;
};

struct StepOutput {
  ad::Var loss;
  std::vector<std::pair<std::string, double>> fields;
};

template <typename T>
std::vector<const T*> gather(const TrainingSet& set, const std::vector<int>& batch,
                             T synth::Triplet::*member) {
  std::vector<const T*> out;
  out.reserve(batch.size());
  for (int i : batch) out.push_back(&(set.samples[static_cast<std::size_t>(i)]->*member));
  return out;
}

std::vector<int> batch_targets(const TrainingSet& set, const std::vector<int>& batch) {
  std::vector<int> t;
  for (int i : batch) t.push_back(set.target(set.samples[static_cast<std::size_t>(i)]->class_id()));
  return t;
}

double batch_accuracy(const Mat& logits, const std::vector<int>& targets) {
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    correct += best == targets[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

template <typename StepFn>
void run_phase(const std::string& phase, int epochs, double lr, const TrainingSet& set,
               const TrainConfig& cfg, RunRecord* record, std::vector<Trainee>& trainees,
               StepFn&& step_fn) {
  set.check_no_leakage();
  if (epochs <= 0) return;
  const auto start = std::chrono::steady_clock::now();
  const std::size_t per_epoch =
      class_balanced_batches(set, cfg.batch_size, cfg.seed, 0).size();
  const double total_steps = static_cast<double>(per_epoch) * epochs;
  long step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto batches = class_balanced_batches(set, cfg.batch_size, cfg.seed, epoch);
    std::vector<std::pair<std::string, double>> sums;
    for (const auto& batch : batches) {
      ad::Tape tape;
      std::vector<BoundParams> bound;
      for (const Trainee& t : trainees) bound.push_back(bind(*t.params, tape, t.as_constants));
      const StepOutput out = step_fn(tape, bound, batch);
      if (!std::isfinite(out.loss.scalar())) {
        throw ContractViolation(phase + ": non-finite loss at epoch " + std::to_string(epoch));
      }
      tape.backward(out.loss);
      const double rate = lr * schedule_factor(cfg.schedule, static_cast<double>(step) / total_steps);
      for (std::size_t k = 0; k < trainees.size(); ++k) {
        if (trainees[k].as_constants) continue;
        trainees[k].sgd.step(*trainees[k].params, collect_gradients(*trainees[k].params, bound[k]), rate);
      }
      ++step;
      if (sums.empty()) {
        sums = out.fields;
      } else {
        for (std::size_t f = 0; f < sums.size(); ++f) sums[f].second += out.fields[f].second;
      }
    }
    for (auto& [name, v] : sums) v /= static_cast<double>(batches.size());
    if (record) record->add_epoch(phase, epoch, std::move(sums));
  }
  if (record) {
    record->add_timing(phase, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
}

}  // namespace

void pretrain_skeleton(SkeletonEncoder& encoder, ClassifierHead& head, const TrainingSet& set,
                       const TrainConfig& cfg, RunRecord* record) {
  if (head.num_classes() != static_cast<int>(set.class_ids.size())) {
    throw DimensionMismatch("classifier head has " + std::to_string(head.num_classes()) +
                            " outputs for " + std::to_string(set.class_ids.size()) + " seen classes");
  }
  std::vector<Trainee> trainees{{&encoder.params(), false, Sgd(cfg.momentum)},
                                {&head.params(), false, Sgd(cfg.momentum)}};
  run_phase("pretrain", cfg.epochs_pretrain, cfg.lr_pretrain, set, cfg, record, trainees,
            [&](ad::Tape& tape, const std::vector<BoundParams>& b, const std::vector<int>& batch) {
              const auto seqs = gather(set, batch, &synth::Triplet::skeleton);
              std::vector<int> lengths;
              const ad::Var x = tape.constant(encoder.stack_input(seqs, &lengths));
              const ad::Var logits = head.logits(encoder.pooled(x, lengths, b[0]), b[1]);
              const auto targets = batch_targets(set, batch);
              const ad::Var loss = graph::cross_entropy(logits, targets);
              return StepOutput{loss, {{"loss", loss.scalar()},
                                       {"accuracy", batch_accuracy(logits.value(), targets)}}};
            });
}

void align_skeletonclip(SkeletonClipModel& model, const TrainingSet& set, const TrainConfig& cfg,
                        RunRecord* record) {
  model.text.set_frozen(cfg.freeze_skeleton_text);
  std::vector<Trainee> trainees{{&model.skeleton.params(), false, Sgd(cfg.momentum)},
                                {&model.text.params(), false, Sgd(cfg.momentum)}};
  run_phase("align", cfg.epochs_align, cfg.lr_align, set, cfg, record, trainees,
            [&](ad::Tape& tape, const std::vector<BoundParams>& b, const std::vector<int>& batch) {
              const auto seqs = gather(set, batch, &synth::Triplet::skeleton);
              const ad::Var z = model.skeleton.embed(tape, b[0], seqs);
              const ad::Var t = model.text.embed(tape, b[1], set.prompts);
              const auto targets = batch_targets(set, batch);
              const ad::Var loss = graph::contrastive_ce(z, t, targets, cfg.loss.tau);
              const Mat sims = z.value() * t.value().transpose();
              return StepOutput{loss, {{"loss", loss.scalar()}, {"accuracy", batch_accuracy(sims, targets)}}};
            });
}

namespace {

void videoclip_phase(const std::string& phase, int epochs, double lr, VideoClipModel& model,
                     const TrainingSet& set, const TrainConfig& cfg, RunRecord* record) {
  model.text.set_frozen(cfg.freeze_video_text);
  std::vector<Trainee> trainees{{&model.video.params(), false, Sgd(cfg.momentum)},
                                {&model.text.params(), false, Sgd(cfg.momentum)}};
  run_phase(phase, epochs, lr, set, cfg, record, trainees,
            [&](ad::Tape& tape, const std::vector<BoundParams>& b, const std::vector<int>& batch) {
              const auto clips = gather(set, batch, &synth::Triplet::video);
              const ad::Var z = model.video.embed(tape, b[0], clips);
              const ad::Var t = model.text.embed(tape, b[1], set.prompts);
              const auto targets = batch_targets(set, batch);
              const ad::Var loss = graph::contrastive_ce(z, t, targets, cfg.loss.tau);
              const Mat sims = z.value() * t.value().transpose();
              return StepOutput{loss, {{"loss", loss.scalar()}, {"accuracy", batch_accuracy(sims, targets)}}};
            });
}

}  // namespace

void finetune_videoclip(VideoClipModel& model, const TrainingSet& set, const TrainConfig& cfg,
                        RunRecord* record, int epochs) {
  videoclip_phase("finetune", epochs < 0 ? cfg.epochs_finetune : epochs, cfg.lr_finetune, model,
                  set, cfg, record);
}

void extend_videoclip(VideoClipModel& model, const TrainingSet& set, const TrainConfig& cfg,
                      RunRecord* record) {
  videoclip_phase("finetune_extra", cfg.epochs_scd, cfg.lr_scd, model, set, cfg, record);
}

void train_scd(VideoClipModel& videoclip, SkeletonClipModel& skeletonclip, const TrainingSet& set,
               const TrainConfig& cfg, RunRecord* record) {
  const LossConfig& lc = cfg.loss;
  const bool offline = lc.kd_mode == KdMode::kOffline;
  const bool feature = lc.kd_mode == KdMode::kFeatureNoProj || lc.kd_mode == KdMode::kFeatureProj;
  if (lc.kd_mode == KdMode::kFeatureNoProj && videoclip.video.d_out() != skeletonclip.skeleton.d_out()) {
    throw DimensionMismatch("feature KD without projection needs D_v == D_s (" +
                            std::to_string(videoclip.video.d_out()) + " vs " +
                            std::to_string(skeletonclip.skeleton.d_out()) + ")");
  }
  videoclip.text.set_frozen(cfg.freeze_video_text);
  skeletonclip.text.set_frozen(cfg.freeze_skeleton_text);

  ParameterSet projection;
  if (lc.kd_mode == KdMode::kFeatureProj) {
    Rng rng(mix_seed(cfg.seed, kProjectionInit));
    projection.add("scd.projection",
                   init_weight(rng, skeletonclip.skeleton.d_out(), videoclip.video.d_out()));
  }
  std::vector<Trainee> trainees{{&videoclip.video.params(), false, Sgd(cfg.momentum)},
                                {&videoclip.text.params(), false, Sgd(cfg.momentum)},
                                {&skeletonclip.skeleton.params(), offline, Sgd(cfg.momentum)},
                                {&skeletonclip.text.params(), offline, Sgd(cfg.momentum)},
                                {&projection, false, Sgd(cfg.momentum)}};
  run_phase("scd", cfg.epochs_scd, cfg.lr_scd, set, cfg, record, trainees,
            [&](ad::Tape& tape, const std::vector<BoundParams>& b, const std::vector<int>& batch) {
              const auto clips = gather(set, batch, &synth::Triplet::video);
              const auto seqs = gather(set, batch, &synth::Triplet::skeleton);
              const auto targets = batch_targets(set, batch);
              const ad::Var z_v = videoclip.video.embed(tape, b[0], clips);
              const ad::Var t_v = videoclip.text.embed(tape, b[1], set.prompts);
              const ad::Var z_s = skeletonclip.skeleton.embed(tape, b[2], seqs);
              const ad::Var t_s = skeletonclip.text.embed(tape, b[3], set.prompts);
              const ad::Var f_lv = ad::matmul_nt(z_v, t_v);
              ad::Var f_ls = ad::matmul_nt(z_s, t_s);
              const ad::Var ce_v = graph::cross_entropy(ad::scale(f_lv, 1.0 / lc.tau), targets);
              const ad::Var ce_s = graph::cross_entropy(ad::scale(f_ls, 1.0 / lc.tau), targets);

              ad::Var distill;
              if (feature) {
                const ad::Var target = lc.stop_gradient ? ad::stop_gradient(z_s) : z_s;
                distill = graph::feature_kd(z_v, target, projection.size() ? &b[4][0] : nullptr);
              } else {
                if (lc.stop_gradient) f_ls = ad::stop_gradient(f_ls);
                switch (lc.distill) {
                  case DistillKind::kMse:
                    distill = lc.scaled_logits
                                  ? graph::distill_mse(ad::scale(f_lv, 1.0 / lc.tau),
                                                       ad::scale(f_ls, 1.0 / lc.tau))
                                  : graph::distill_mse(f_lv, f_ls);
                    break;
                  case DistillKind::kKl:
                    distill = graph::distill_kl(f_lv, f_ls, lc.tau_distill);
                    break;
                  case DistillKind::kContrastive:
                    distill = graph::distill_contrastive(f_lv, f_ls, lc.tau_distill);
                    break;
                }
              }
              const ad::Var loss = ad::add(ad::add(ce_v, ce_s), ad::scale(distill, lc.alpha));
              return StepOutput{loss,
                                {{"loss", loss.scalar()},
                                 {"ce_video", ce_v.scalar()},
                                 {"ce_skeleton", ce_s.scalar()},
                                 {"distill", distill.scalar()},
                                 {"alpha", lc.alpha},
                                 {"accuracy_video", batch_accuracy(f_lv.value(), targets)},
                                 {"accuracy_skeleton", batch_accuracy(f_ls.value(), targets)}}};
            });
}

BaselineKind parse_baseline_kind(const std::string& text) {
  if (text == "trimodal") return BaselineKind::kTrimodal;
  if (text == "crossproj") return BaselineKind::kCrossproj;
  throw ConfigError("unknown baseline kind `" + text + "` (expected trimodal or crossproj)");
}

std::string to_string(BaselineKind kind) {
  return kind == BaselineKind::kTrimodal ? "trimodal" : "crossproj";
}

void train_baseline(BaselineKind kind, VideoClipModel& videoclip, SkeletonEncoder& skeleton,
                    const TrainingSet& set, const TrainConfig& cfg, RunRecord* record) {
  const double tau = cfg.loss.tau;
  if (kind == BaselineKind::kTrimodal) {
    videoclip.text.set_frozen(cfg.freeze_video_text);
    std::vector<Trainee> trainees{{&videoclip.video.params(), false, Sgd(cfg.momentum)},
                                  {&videoclip.text.params(), false, Sgd(cfg.momentum)},
                                  {&skeleton.params(), false, Sgd(cfg.momentum)}};
    run_phase("trimodal", cfg.epochs_baseline, cfg.lr_baseline, set, cfg, record, trainees,
              [&](ad::Tape& tape, const std::vector<BoundParams>& b, const std::vector<int>& batch) {
                const auto clips = gather(set, batch, &synth::Triplet::video);
                const auto seqs = gather(set, batch, &synth::Triplet::skeleton);
                std::vector<TextPrompt> matched;
                for (int i : batch) matched.push_back(set.samples[static_cast<std::size_t>(i)]->prompt);
                const ad::Var z_v = videoclip.video.embed(tape, b[0], clips);
                const ad::Var z_t = videoclip.text.embed(tape, b[1], matched);
                const ad::Var z_s = skeleton.embed(tape, b[2], seqs);
                const auto terms = graph::trimodal_contrastive(z_v, z_s, z_t, tau);
                return StepOutput{terms.total,
                                  {{"loss", terms.total.scalar()},
                                   {"video_text", terms.video_text.scalar()},
                                   {"skeleton_text", terms.skeleton_text.scalar()},
                                   {"video_skeleton", terms.video_skeleton.scalar()}}};
              });
    return;
  }
  std::vector<Trainee> trainees{{&videoclip.video.params(), true, Sgd(cfg.momentum)},
                                {&skeleton.params(), false, Sgd(cfg.momentum)}};
  run_phase("crossproj", cfg.epochs_baseline, cfg.lr_baseline, set, cfg, record, trainees,
            [&](ad::Tape& tape, const std::vector<BoundParams>& b, const std::vector<int>& batch) {
              const auto clips = gather(set, batch, &synth::Triplet::video);
              const auto seqs = gather(set, batch, &synth::Triplet::skeleton);
              const ad::Var z_v = videoclip.video.embed(tape, b[0], clips);
              const ad::Var z_s = skeleton.embed(tape, b[1], seqs);
              const ad::Var loss = graph::crossproj_align(z_s, z_v, tau);
              return StepOutput{loss, {{"loss", loss.scalar()}}};
            });
}

}  // namespace ski
