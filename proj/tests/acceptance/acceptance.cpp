// Acceptance gate: one PASS/FAIL line per criterion, details indented.
// Usage: ski_acceptance [work-dir]

#include "ski/error.hpp"
#include "ski/experiment.hpp"
#include "ski/losses.hpp"
#include "ski/lvlm.hpp"
#include "ski/training.hpp"
#include "ski/zseval.hpp"

#include "gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace ski;
using ski::testing::as_bound;
using ski::testing::check_gradients;
using ski::testing::random_mat;
using ski::testing::random_unit_rows;
using ski::testing::values_of;

namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradTolerance = 1e-4;
constexpr int kGradCoordinates = 20;
constexpr double kGradSeconds = 60.0;
constexpr double kIdentityTolerance = 1e-9;
constexpr double kHarmonicTolerance = 0.05;
constexpr int kRandomSamples = 1000;
constexpr double kSigmas = 3.0;
constexpr double kScdCpuSeconds = 600.0;
constexpr int kSeeds = 5;
constexpr int kSaliencyMinSeeds = 3;

struct Result {
  bool pass = true;
  std::string summary;
  std::vector<std::string> details;

  void detail(const std::string& line) { details.push_back(line); }
  void require(bool ok, const std::string& line) {
    pass = pass && ok;
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + line);
  }
};

int failures = 0;

void report(int id, const std::string& name, const Result& r) {
  std::cout << (r.pass ? "PASS" : "FAIL") << " [" << id << "] " << name;
  if (!r.summary.empty()) std::cout << ": " << r.summary;
  std::cout << "\n";
  for (const std::string& d : r.details) std::cout << "    " << d << "\n";
  std::cout.flush();
  if (!r.pass) ++failures;
}

std::string num(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

template <class F>
Result guarded(F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    Result r;
    r.pass = false;
    r.summary = std::string("exception: ") + e.what();
    return r;
  }
}

// ---------------------------------------------------------------------------

Result gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  Result r;
  double worst = 0.0;
  auto record = [&](const std::string& name, const ski::testing::GradCheck& g) {
    worst = std::max(worst, g.max_rel_error);
    r.require(g.coordinates >= kGradCoordinates && g.max_rel_error < kGradTolerance,
              name + ": " + std::to_string(g.coordinates) + " coords, max rel err " + num(g.max_rel_error, 3));
  };

  Rng rng(2024);
  const Mat z = random_unit_rows(rng, 6, 8), text = random_unit_rows(rng, 5, 8);
  const std::vector<int> targets{0, 4, 2, 1, 3, 3};
  record("contrastive_ce", check_gradients(
                               [&](ad::Tape&, const auto& v) { return graph::contrastive_ce(v[0], v[1], targets, 0.07); },
                               {z, text}, kGradCoordinates, 1));
  const Mat f1 = random_mat(rng, 6, 5, 0.5), f2 = random_mat(rng, 6, 5, 0.5);
  record("distill_mse", check_gradients([](ad::Tape&, const auto& v) { return graph::distill_mse(v[0], v[1]); },
                                        {f1, f2}, kGradCoordinates, 2));
  record("distill_kl", check_gradients([](ad::Tape&, const auto& v) { return graph::distill_kl(v[0], v[1], 0.1); },
                                       {f1, f2}, kGradCoordinates, 3));
  record("distill_contrastive",
         check_gradients([](ad::Tape&, const auto& v) { return graph::distill_contrastive(v[0], v[1], 0.1); },
                         {f1, f2}, kGradCoordinates, 4));
  const Mat zs = random_mat(rng, 6, 4), proj = random_mat(rng, 4, 5);
  record("feature_kd", check_gradients(
                           [](ad::Tape&, const auto& v) { return graph::feature_kd(v[0], v[1], &v[2]); },
                           {f1, zs, proj}, kGradCoordinates, 5));

  // Autoregressive loss on raw logits, then end to end through the frozen LM
  // into a projector weight.
  const Mat logits = random_mat(rng, 7, 13);
  const std::vector<int> lt{1, 2, 3, 4, 5, 6, 7};
  const std::vector<char> mask{0, 0, 0, 1, 1, 1, 1};
  record("autoregressive_lm_loss",
         check_gradients([&](ad::Tape&, const auto& v) { return graph::autoregressive_lm_loss(v[0], lt, mask); },
                         {logits}, kGradCoordinates, 6));
  lvlm::LmConfig lc;
  lc.width = 16;
  lc.mlp_width = 24;
  const lvlm::ToyCausalLM lm(lc);
  const auto& vocab = synth::Vocabulary::instance();
  const std::vector<int> head = vocab.tokenize("user: what is the person doing ?");
  const std::vector<int> tail = vocab.tokenize("assistant: the person");
  const Mat visual = random_mat(rng, 3, 6);
  const Mat w = random_mat(rng, 6, 16, 0.3);
  const auto lm_loss = [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
    const BoundParams b = lm.bind_frozen(tape);
    const ad::Var seq = ad::concat_rows(std::vector<ad::Var>{lm.token_embeddings(b, head),
                                                             ad::matmul(tape.constant(visual), v[0]),
                                                             lm.token_embeddings(b, tail)});
    // Positions of "assistant: the person" predict "the", "person", <eos>.
    const int n = static_cast<int>(seq.rows());
    const int a = n - static_cast<int>(tail.size());
    std::vector<int> next(static_cast<std::size_t>(n), 0);
    std::vector<char> resp(static_cast<std::size_t>(n), 0);
    for (int i = a; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i - a);
      next[static_cast<std::size_t>(i)] = k + 1 < tail.size() ? tail[k + 1] : vocab.eos();
      resp[static_cast<std::size_t>(i)] = 1;
    }
    return graph::autoregressive_lm_loss(lm.forward(seq, b), next, resp);
  };
  record("autoregressive_lm_loss via frozen LM -> projector", check_gradients(lm_loss, {w}, kGradCoordinates, 7));

  // Both encoders at the default widths and default benchmark frame shapes.
  const synth::DatasetConfig dc;
  const VideoEncoder video(dc.channels, dc.height, dc.width, EncoderConfig{}, 11);
  VideoClip c1, c2;
  for (VideoClip* c : {&c1, &c2}) {
    c->channels = dc.channels;
    c->height = dc.height;
    c->width = dc.width;
    c->frames = (random_mat(rng, c == &c1 ? 3 : 2, dc.channels * dc.height * dc.width).array() * 0.5 + 0.5).matrix();
  }
  const VideoClip* clips[] = {&c1, &c2};
  std::vector<int> vlen;
  std::vector<Mat> vin = values_of(video.params());
  const std::size_t nv = vin.size();
  vin.push_back(video.stack_input(clips, &vlen));
  const Mat wv = random_mat(rng, 2, video.d_out());
  record("video encoder (params + pixels)",
         check_gradients([&](ad::Tape& tape, const std::vector<ad::Var>& v) {
           return ad::sum(ad::hadamard(video.embed(v[nv], vlen, as_bound(v, 0, nv)), tape.constant(wv)));
         }, vin, kGradCoordinates, 8));

  const SkeletonEncoder skel(dc.joints, EncoderConfig{}, 12);
  SkeletonSequence s1, s2;
  s1.joints = s2.joints = dc.joints;
  s1.frames = random_mat(rng, 5, 3 * dc.joints, 0.4);
  s2.frames = random_mat(rng, 4, 3 * dc.joints, 0.4);
  const SkeletonSequence* seqs[] = {&s1, &s2};
  std::vector<int> slen;
  std::vector<Mat> sin = values_of(skel.params());
  const std::size_t ns = sin.size();
  sin.push_back(skel.stack_input(seqs, &slen));
  const Mat ws = random_mat(rng, 2, skel.d_out());
  record("skeleton encoder (params + joints)",
         check_gradients([&](ad::Tape& tape, const std::vector<ad::Var>& v) {
           return ad::sum(ad::hadamard(skel.embed(v[ns], slen, as_bound(v, 0, ns)), tape.constant(ws)));
         }, sin, kGradCoordinates, 9));

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.require(secs < kGradSeconds, "runtime " + num(secs, 3) + " s < " + num(kGradSeconds) + " s");
  r.summary = "max rel err " + num(worst, 3) + " < " + num(kGradTolerance) + ", " + num(secs, 3) + " s";
  return r;
}

Result analytic_identities() {
  Result r;
  for (int c : {2, 7, 60}) {
    LogitMatrix uniform{Mat::Constant(4, c, 0.3), {}, {}};
    const std::vector<int> t{0, c - 1, 1, c / 2};
    const double ce = contrastive_ce(uniform, t, 0.07).scalar;
    r.require(std::abs(ce - std::log(static_cast<double>(c))) < kIdentityTolerance,
              "uniform CE, C=" + std::to_string(c) + ": |" + num(ce, 12) + " - ln C| < 1e-9");
  }
  Rng rng(5);
  const LogitMatrix f{random_mat(rng, 5, 4), {}, {}};
  r.require(distill_mse(f, f).scalar == 0.0, "distill_mse(F, F) == 0");
  double shift = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Vec v = random_mat(rng, 9, 1, 3.0).col(0);
    const double c = rng.uniform(-50, 50);
    shift = std::max(shift, (softmax(v, 0.5) - softmax((v.array() + c).matrix(), 0.5)).cwiseAbs().maxCoeff());
  }
  r.require(shift < kIdentityTolerance, "softmax shift invariance, max diff " + num(shift, 3));
  const LossValue ce_v = LossValue::single("ce_video", 1.7), ce_s = LossValue::single("ce_skeleton", 0.4);
  const LossValue d = LossValue::single("distill", 0.0123);
  double lin = 0.0;
  const double base = scd_total(ce_v, ce_s, d, 0.0).scalar;
  for (int i = 0; i < 50; ++i) {
    const double a = rng.uniform(0, 100), b = rng.uniform(0, 100);
    const double la = scd_total(ce_v, ce_s, d, a).scalar, lb = scd_total(ce_v, ce_s, d, b).scalar;
    lin = std::max(lin, std::abs((la - lb) - (a - b) * d.scalar));
    lin = std::max(lin, std::abs(la - base - a * d.scalar));
  }
  r.require(lin < kIdentityTolerance, "scd_total linear in alpha, max deviation " + num(lin, 3));
  return r;
}

Result decoupling() {
  Result r;
  const synth::DatasetConfig dc;
  const synth::Dataset ds = synth::generate_dataset(dc);
  const TrainingSet set = make_training_set(ds);
  const ModelConfig mc;
  TrainConfig cfg;
  cfg.epochs_scd = 2;
  cfg.epochs_align = 2;
  cfg.lr_align = cfg.lr_scd;
  cfg.loss.alpha = 0.0;
  cfg.loss.kd_mode = KdMode::kOnline;

  VideoClipModel vc = make_videoclip(mc, dc, 1);
  SkeletonClipModel sk = make_skeletonclip(mc, dc, 1);
  train_scd(vc, sk, set, cfg, nullptr);
  VideoClipModel vc_alone = make_videoclip(mc, dc, 1);
  SkeletonClipModel sk_alone = make_skeletonclip(mc, dc, 1);
  extend_videoclip(vc_alone, set, cfg, nullptr);
  align_skeletonclip(sk_alone, set, cfg, nullptr);

  const auto bytes = [](const ParameterSet& p) {
    std::string out;
    for (const Parameter& q : p.items()) {
      out.append(reinterpret_cast<const char*>(q.value.data()), sizeof(double) * static_cast<std::size_t>(q.value.size()));
    }
    return out;
  };
  r.require(bytes(vc.video.params()) == bytes(vc_alone.video.params()), "video encoder bytes identical");
  r.require(bytes(vc.text.params()) == bytes(vc_alone.text.params()), "video-side text encoder bytes identical");
  r.require(bytes(sk.skeleton.params()) == bytes(sk_alone.skeleton.params()), "skeleton encoder bytes identical");
  r.require(bytes(sk.text.params()) == bytes(sk_alone.text.params()), "skeleton-side text encoder bytes identical");
  r.summary = "alpha=0, " + std::to_string(cfg.epochs_scd) + " epochs on the default benchmark";
  return r;
}

Result harmonic_pairs() {
  Result r;
  const double a = harmonic_mean({52.0, 77.5}), b = harmonic_mean({53.3, 70.8});
  r.require(std::abs(a - 62.2) <= kHarmonicTolerance, "H(52.0, 77.5) = " + num(a, 6) + " vs 62.2");
  r.require(std::abs(b - 60.8) <= kHarmonicTolerance, "H(53.3, 70.8) = " + num(b, 6) + " vs 60.8");
  r.summary = num(a, 4) + " and " + num(b, 4);
  return r;
}

class OracleModel : public ZeroShotModel {
 public:
  explicit OracleModel(int classes) : classes_(classes) {}
  Mat embed_samples(std::span<const synth::Triplet* const> s) const override {
    Mat m = Mat::Zero(static_cast<Eigen::Index>(s.size()), classes_);
    for (std::size_t i = 0; i < s.size(); ++i) m(static_cast<Eigen::Index>(i), s[i]->class_id()) = 1.0;
    return m;
  }
  Mat embed_prompts(const std::vector<TextPrompt>& p) const override {
    Mat m = Mat::Zero(static_cast<Eigen::Index>(p.size()), classes_);
    for (std::size_t i = 0; i < p.size(); ++i) m(static_cast<Eigen::Index>(i), p[i].class_id) = 1.0;
    return m;
  }
  std::string fingerprint() const override { return "oracle"; }

 private:
  int classes_;
};

class RandomModel : public ZeroShotModel {
 public:
  Mat embed_samples(std::span<const synth::Triplet* const> s) const override {
    Mat m(static_cast<Eigen::Index>(s.size()), 32);
    for (std::size_t i = 0; i < s.size(); ++i) {
      Rng rng(mix_seed(static_cast<std::uint64_t>(s[i]->class_id()) * 100000 + s[i]->sample_index, 0xACCE));
      m.row(static_cast<Eigen::Index>(i)) = random_unit_rows(rng, 1, 32);
    }
    return m;
  }
  Mat embed_prompts(const std::vector<TextPrompt>& p) const override {
    Rng rng(99);
    return random_unit_rows(rng, static_cast<Eigen::Index>(p.size()), 32);
  }
  std::string fingerprint() const override { return "random"; }
};

Result zero_shot_harness() {
  Result r;
  const synth::Dataset ds = synth::generate_dataset(synth::DatasetConfig{});
  const ZeroShotReport oracle = evaluate_split(OracleModel(ds.config.num_classes), ds, ds.split, SplitSide::kUnseen);
  r.require(oracle.top1 == 1.0, "oracle on the default unseen split: " + num(oracle.top1) + " over " +
                                    std::to_string(oracle.samples) + " samples");

  // Cheap frames: the random model never reads them.
  synth::DatasetConfig big;
  big.num_classes = 10;
  big.seen_ratio = 0.5;
  big.samples_per_class = kRandomSamples / 5;
  big.video_frames = 1;
  big.height = 16;
  big.width = 16;
  big.channels = 1;
  const synth::Dataset many = synth::generate_dataset(big);
  const ZeroShotReport rnd = evaluate_split(RandomModel{}, many, many.split, SplitSide::kUnseen);
  const double p = 1.0 / static_cast<double>(many.split.unseen.size());
  const double band = kSigmas * std::sqrt(p * (1 - p) / rnd.samples);
  r.require(rnd.samples == kRandomSamples && std::abs(rnd.top1 - p) <= band,
            "random over " + std::to_string(rnd.samples) + " samples: " + num(rnd.top1) + " in " + num(p) +
                " +/- " + num(band));
  r.summary = "oracle " + num(oracle.top1) + ", random " + num(rnd.top1) + " (chance " + num(p) + ")";
  return r;
}

// Shared default-benchmark runs for criteria 6, 7, 10 and 11.
struct BenchmarkRuns {
  fs::path root;
  std::map<std::string, std::vector<RunRecord>> records;
  double scd_cpu_seconds = 0.0;
};

CellSpec default_cell(const std::string& name, const std::string& procedure, bool saliency = false) {
  KvConfig kv;
  kv.set("procedure", procedure);
  if (saliency) kv.set("eval.saliency", "true");
  return CellSpec{name, CellConfig::from_kv(kv)};
}

std::vector<std::uint64_t> seeds() {
  std::vector<std::uint64_t> s;
  for (int i = 1; i <= kSeeds; ++i) s.push_back(static_cast<std::uint64_t>(i));
  return s;
}

BenchmarkRuns run_benchmark(const fs::path& root) {
  BenchmarkRuns b;
  b.root = root;
  ExperimentPlan main;
  main.name = "direction";
  main.seeds = seeds();
  main.output_root = root;
  main.cells = {default_cell("videoclip", "videoclip"), default_cell("scd", "scd", true)};
  const double t0 = cpu_seconds();
  run_plan(main);
  b.scd_cpu_seconds = cpu_seconds() - t0;

  ExperimentPlan baselines = main;
  baselines.cells = {default_cell("trimodal", "trimodal"), default_cell("crossproj", "crossproj")};
  run_plan(baselines);
  for (const char* cell : {"videoclip", "scd", "trimodal", "crossproj"}) {
    for (std::uint64_t s : main.seeds) {
      b.records[cell].push_back(RunRecord::load(run_directory(root, cell, s) / "record.jsonl"));
    }
  }
  return b;
}

double mean_metric(const std::vector<RunRecord>& runs, const std::string& metric) {
  double sum = 0.0;
  for (const RunRecord& r : runs) sum += r.metric(metric);
  return sum / static_cast<double>(runs.size());
}

std::string per_seed(const std::vector<RunRecord>& runs, const std::string& metric) {
  std::string out;
  for (const RunRecord& r : runs) out += (out.empty() ? "" : " ") + num(r.metric(metric), 3);
  return out;
}

Result direction_scd(const BenchmarkRuns& b) {
  Result r;
  const double v = mean_metric(b.records.at("videoclip"), "unseen_top1");
  const double s = mean_metric(b.records.at("scd"), "unseen_top1");
  r.detail("videoclip unseen top-1 per seed: " + per_seed(b.records.at("videoclip"), "unseen_top1"));
  r.detail("scd       unseen top-1 per seed: " + per_seed(b.records.at("scd"), "unseen_top1"));
  r.require(s > v, "mean unseen top-1: scd " + num(s) + " > videoclip " + num(v));
  r.require(b.scd_cpu_seconds < kScdCpuSeconds,
            "cpu time of both cells " + num(b.scd_cpu_seconds, 4) + " s < " + num(kScdCpuSeconds) + " s");
  r.summary = "scd " + num(s) + " vs videoclip " + num(v) + " over " + std::to_string(kSeeds) + " seeds";
  return r;
}

Result direction_baselines(const BenchmarkRuns& b) {
  Result r;
  const double s = mean_metric(b.records.at("scd"), "unseen_top1");
  for (const char* cell : {"trimodal", "crossproj"}) {
    const double m = mean_metric(b.records.at(cell), "unseen_top1");
    r.detail(std::string(cell) + " unseen top-1 per seed: " + per_seed(b.records.at(cell), "unseen_top1"));
    r.require(m < s, std::string(cell) + " " + num(m) + " < scd " + num(s));
  }
  r.summary = "trimodal " + num(mean_metric(b.records.at("trimodal"), "unseen_top1")) + ", crossproj " +
              num(mean_metric(b.records.at("crossproj"), "unseen_top1")) + ", scd " + num(s);
  return r;
}

Result saliency(const BenchmarkRuns& b) {
  Result r;
  int wins = 0;
  int seed = 1;
  for (const RunRecord& rec : b.records.at("scd")) {
    const double in = rec.metric("saliency_inside"), out = rec.metric("saliency_outside");
    wins += in > out;
    r.detail("seed " + std::to_string(seed++) + " class " + num(rec.metric("saliency_class")) + ": inside " +
             num(in, 3) + " vs outside " + num(out, 3));
  }
  r.require(wins >= kSaliencyMinSeeds,
            std::to_string(wins) + " of " + std::to_string(kSeeds) + " seeds inside > outside");
  r.summary = std::to_string(wins) + "/" + std::to_string(kSeeds) + " seeds";
  return r;
}

Result reproducibility(const BenchmarkRuns& b, const fs::path& again_root) {
  Result r;
  ExperimentPlan plan;
  plan.seeds = {1};
  plan.output_root = again_root;
  plan.cells = {default_cell("scd", "scd", true)};
  run_plan(plan);
  const fs::path first = run_directory(b.root, "scd", 1), second = run_directory(again_root, "scd", 1);
  for (const char* f : {"record.jsonl", "model.ckpt", "config.kv", "eval.json"}) {
    const std::string x = slurp(first / f), y = slurp(second / f);
    r.require(!x.empty() && x == y, std::string(f) + " byte-identical (" + std::to_string(x.size()) + " bytes)");
  }
  r.summary = "cell scd, seed 1, run twice";
  return r;
}

Result freeze_contracts() {
  Result r;
  synth::DatasetConfig dc;
  dc.samples_per_class = 8;
  const synth::Dataset ds = synth::generate_dataset(dc);
  const TrainingSet set = make_training_set(ds);
  const ModelConfig mc;
  TrainConfig cfg;
  cfg.epochs_pretrain = cfg.epochs_align = cfg.epochs_finetune = cfg.epochs_scd = 2;

  SkeletonClipModel sk = make_skeletonclip(mc, dc, 3);
  sk.text.set_frozen(true);
  const auto text0 = sk.text.params().checksum();
  align_skeletonclip(sk, set, cfg, nullptr);
  r.require(sk.text.params().checksum() == text0, "frozen text encoder unchanged by alignment");

  VideoClipModel vc = make_videoclip(mc, dc, 3);
  TrainConfig offline = cfg;
  offline.loss.kd_mode = KdMode::kOffline;
  const auto teacher = sk.skeleton.params().checksum();
  const auto teacher_text = sk.text.params().checksum();
  train_scd(vc, sk, set, offline, nullptr);
  r.require(sk.skeleton.params().checksum() == teacher && sk.text.params().checksum() == teacher_text,
            "offline-KD teacher unchanged by SCD");

  const lvlm::ToyCausalLM lm;
  const auto lm0 = lm.checksum();
  const auto video0 = vc.video.params().checksum();
  const auto skel0 = sk.skeleton.params().checksum();
  lvlm::ProjectorConfig pc;
  pc.d_v = vc.video.d_out();
  pc.d_s = sk.skeleton.d_out();
  pc.k = lm.width();
  lvlm::Projectors proj(pc, true, 1);
  lvlm::LvlmConfig lc;
  lc.epochs = 2;
  const lvlm::CaptionSplit split = lvlm::make_caption_split(ds, vc.video, &sk.skeleton, lc.holdout_fraction);
  lvlm::train_projectors(lm, proj, split, lc, vc.video, &sk.skeleton, nullptr);
  r.require(lm.checksum() == lm0, "toy LM unchanged by projector training");
  r.require(vc.video.params().checksum() == video0 && sk.skeleton.params().checksum() == skel0,
            "f_v and g_s unchanged by projector training");

  const VideoTextModel model(vc.video, vc.text);
  evaluate_split(model, ds, ds.split, SplitSide::kUnseen);
  saliency_map(vc.video, vc.text, ds.triplets[0].video, ds.triplets[0].prompt);
  lvlm::generate_caption_text(lm, proj, vc.video, ds.triplets[0].video, lc.query, 4);
  r.require(vc.video.params().checksum() == video0, "f_v unchanged by evaluation, saliency and captioning");
  return r;
}

Result lvlm_direction(const fs::path& root) {
  Result r;
  ExperimentPlan plan;
  plan.seeds = seeds();
  plan.output_root = root;
  CellSpec video = default_cell("video-only", "lvlm");
  video.config.lvlm.use_skeleton = false;
  CellSpec both = default_cell("with-skeleton", "lvlm");
  both.config.lvlm.use_skeleton = true;
  plan.cells = {video, both};
  run_plan(plan);
  double diff = 0.0;
  std::string v_line, s_line;
  for (std::uint64_t s : plan.seeds) {
    const RunRecord v = RunRecord::load(run_directory(root, "video-only", s) / "record.jsonl");
    const RunRecord k = RunRecord::load(run_directory(root, "with-skeleton", s) / "record.jsonl");
    diff += v.metric("heldout_nll") - k.metric("heldout_nll");
    v_line += " " + num(v.metric("heldout_nll"), 4);
    s_line += " " + num(k.metric("heldout_nll"), 4);
  }
  diff /= static_cast<double>(plan.seeds.size());
  r.detail("video-only    held-out NLL per seed:" + v_line);
  r.detail("with-skeleton held-out NLL per seed:" + s_line);
  r.require(diff > 0.0, "mean NLL improvement " + num(diff, 4) + " > 0");

  // Skeleton-free generation: only the visual projector is restored.
  const Checkpoint ck = Checkpoint::load(run_directory(root, "with-skeleton", 1) / "model.ckpt");
  const CellConfig cell = both.config.with_seed(1);
  const synth::Dataset ds = synth::generate_dataset(cell.data);
  VideoClipModel vc = make_videoclip(cell.model, cell.data, cell.train.seed);
  ck.restore(vc.video.params(), "videoclip.");
  const lvlm::ToyCausalLM lm;
  lvlm::ProjectorConfig pc;
  pc.d_v = vc.video.d_out();
  pc.d_s = cell.model.skeleton.d_out;
  pc.n_v = cell.data.video_frames;
  pc.n_s = cell.data.skeleton_frames;
  pc.k = lm.width();
  lvlm::Projectors visual_only(pc, false, 1);
  ck.restore(visual_only.params(), "lvlm.");
  int generated = 0;
  for (std::size_t i = 0; i < ds.triplets.size(); i += ds.triplets.size() / 4) {
    const std::string text =
        lvlm::generate_caption_text(lm, visual_only, vc.video, ds.triplets[i].video, cell.lvlm.query, cell.lvlm.max_len);
    if (generated == 0) r.detail("sample caption: \"" + text + "\"");
    ++generated;
  }
  r.require(!visual_only.has_skeleton() && generated == 4,
            "skeleton-free generation ran " + std::to_string(generated) + " times with no skeleton projector");
  r.summary = "mean held-out NLL improvement " + num(diff, 4);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "ski_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  report(1, "gradient suite", guarded(gradient_suite));
  report(2, "analytic identities", guarded(analytic_identities));
  report(3, "alpha=0 decoupling", guarded(decoupling));
  report(4, "harmonic-mean reproduction", guarded(harmonic_pairs));
  report(5, "zero-shot harness oracle", guarded(zero_shot_harness));

  BenchmarkRuns bench;
  std::string bench_error;
  try {
    bench = run_benchmark(work / "benchmark");
  } catch (const std::exception& e) {
    bench_error = e.what();
  }
  const auto with_bench = [&](auto&& f) {
    return guarded([&] {
      if (!bench_error.empty()) throw Error("benchmark runs failed: " + bench_error);
      return f(bench);
    });
  };
  report(6, "SCD beats fine-tuned VideoCLIP on unseen classes", with_bench(direction_scd));
  report(7, "tri-modal and cross-projection below SCD", with_bench(direction_baselines));
  report(8, "freeze contracts", guarded(freeze_contracts));
  report(9, "LVLM skeleton tokens lower held-out NLL", guarded([&] { return lvlm_direction(work / "lvlm"); }));
  report(10, "saliency inside the limb mask", with_bench(saliency));
  report(11, "reproducibility", with_bench([&](const BenchmarkRuns& b) { return reproducibility(b, work / "again"); }));

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
