// ski: command line front end. Exit codes: 0 success, 2 configuration
// error, 3 runtime error.

#include "ski/binary_io.hpp"
#include "ski/checkpoint.hpp"
#include "ski/error.hpp"
#include "ski/experiment.hpp"
#include "ski/kvconfig.hpp"
#include "ski/lvlm.hpp"
#include "ski/synthdata.hpp"
#include "ski/training.hpp"
#include "ski/zseval.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace ski;

namespace {

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 3;

fs::path output_root() {
  if (const char* env = std::getenv("SKI_OUTPUT_ROOT"); env && *env) return env;
  return "runs";
}

// --config file plus repeated --set key=value overrides.
struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "flat key = value config file");
    cmd->add_option("--set", sets, "override, key=value (repeatable)");
    cmd->add_option("--seed", seed, "seed for data, training and projectors");
  }

  KvConfig raw() const {
    KvConfig kv = file.empty() ? KvConfig{} : KvConfig::load(file);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got `" + s + "`");
      kv = kv.merged(KvConfig::parse(s.substr(0, eq) + " = " + s.substr(eq + 1), "--set"));
    }
    return kv;
  }

  CellConfig cell(Procedure procedure) const {
    KvConfig kv = raw();
    if (!kv.has("procedure")) kv.set("procedure", to_string(procedure));
    CellConfig c = CellConfig::from_kv(kv);
    if (seed) c = c.with_seed(*seed);
    c.train.validate();
    c.lvlm.validate();
    return c;
  }
};

struct Context {
  CellConfig cell;
  synth::Dataset dataset;
  TrainingSet set;
};

Context prepare(const CellConfig& cell) {
  Context ctx{cell, synth::generate_dataset(cell.data), {}};
  ctx.set = make_training_set(ctx.dataset);
  return ctx;
}

fs::path out_dir(const std::string& given, const std::string& verb) {
  return given.empty() ? output_root() / verb : fs::path(given);
}

void save_run(const fs::path& dir, const std::string& name, const CellConfig& cell,
              const RunRecord& rec, Checkpoint ck) {
  fs::create_directories(dir);
  KvConfig kv = cell.to_kv();
  kv.set("cell", name);
  ck.fingerprint = kv.fingerprint();
  ck.meta = kv;
  rec.save(dir / "record.jsonl");
  write_text_file(dir / "timings.jsonl", rec.timings_jsonl());
  ck.save(dir / "model.ckpt");
  write_text_file(dir / "config.kv", kv.canonical());
  std::cout << "wrote " << dir.string() << "\n";
}

RunRecord new_record(const std::string& procedure, const CellConfig& cell) {
  return RunRecord(procedure, cell.to_kv().fingerprint(), cell.train.seed);
}

CellConfig config_of(const Checkpoint& ck) {
  if (!ck.meta.has("procedure")) throw FormatError("checkpoint carries no run config");
  return CellConfig::from_kv(ck.meta);
}

// Restores whichever dual encoder the checkpoint holds.
struct LoadedModels {
  std::optional<VideoClipModel> video;
  std::optional<SkeletonClipModel> skeleton;
  std::optional<SkeletonEncoder> baseline;
};

LoadedModels load_models(const Checkpoint& ck, const CellConfig& c) {
  LoadedModels m;
  if (ck.has_prefix("videoclip.")) {
    m.video = make_videoclip(c.model, c.data, c.train.seed);
    ck.restore(m.video->video.params(), "videoclip.");
    ck.restore(m.video->text.params(), "videoclip.");
  }
  if (ck.has_prefix("skeletonclip.")) {
    m.skeleton = make_skeletonclip(c.model, c.data, c.train.seed);
    ck.restore(m.skeleton->skeleton.params(), "skeletonclip.");
    if (ck.has_prefix("skeletonclip.text.")) ck.restore(m.skeleton->text.params(), "skeletonclip.");
  }
  if (ck.has_prefix("baseline.")) {
    m.baseline = make_skeletonclip(c.model, c.data, c.train.seed).skeleton;
    ck.restore(m.baseline->params(), "baseline.");
  }
  return m;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const ConfigArgs& args, const std::string& out) {
  KvConfig kv = args.raw();
  synth::DatasetConfig cfg = synth::DatasetConfig::from_kv(kv);
  if (args.seed) cfg.seed = *args.seed;
  cfg.validate();
  const synth::Dataset ds = synth::generate_dataset(cfg);
  synth::self_test(ds);
  fs::path path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  synth::write_dataset(ds, path);
  fs::path split = path;
  split += ".split";
  synth::write_split(ds.split, split);
  const auto stats = synth::adl_statistics(ds);
  std::cout << "wrote " << path.string() << " (" << ds.triplets.size() << " samples, "
            << ds.actions.size() << " classes) and " << split.string() << "\n"
            << "appearance_gap " << format_double(stats.appearance_gap) << " motion_gap "
            << format_double(stats.motion_gap) << "\n";
  return 0;
}

int cmd_inspect(const std::string& file) {
  const Checkpoint ck = Checkpoint::load(file);
  std::cout << "fingerprint " << ck.fingerprint << "\n";
  for (const auto& [k, v] : ck.meta.entries()) std::cout << "meta " << k << " = " << v << "\n";
  std::cout << ck.describe();
  return 0;
}

int cmd_pretrain(const ConfigArgs& args, const std::string& out) {
  const Context ctx = prepare(args.cell(Procedure::kSkeletonclip));
  RunRecord rec = new_record("pretrain-skeleton", ctx.cell);
  SkeletonClipModel sk = make_skeletonclip(ctx.cell.model, ctx.cell.data, ctx.cell.train.seed);
  ClassifierHead head =
      make_head(ctx.cell.model, static_cast<int>(ctx.set.class_ids.size()), ctx.cell.train.seed);
  pretrain_skeleton(sk.skeleton, head, ctx.set, ctx.cell.train, &rec);
  Checkpoint ck;
  ck.add(sk.skeleton.params(), "skeletonclip.");
  ck.add(head.params(), "classifier.");
  save_run(out_dir(out, "pretrain-skeleton"), "pretrain-skeleton", ctx.cell, rec, ck);
  return 0;
}

int cmd_align(const ConfigArgs& args, const std::string& init, const std::string& out) {
  const Context ctx = prepare(args.cell(Procedure::kSkeletonclip));
  RunRecord rec = new_record("align-skeletonclip", ctx.cell);
  SkeletonClipModel sk = make_skeletonclip(ctx.cell.model, ctx.cell.data, ctx.cell.train.seed);
  if (!init.empty()) {
    Checkpoint::load(init).restore(sk.skeleton.params(), "skeletonclip.");
  } else {
    ClassifierHead head =
        make_head(ctx.cell.model, static_cast<int>(ctx.set.class_ids.size()), ctx.cell.train.seed);
    pretrain_skeleton(sk.skeleton, head, ctx.set, ctx.cell.train, &rec);
  }
  align_skeletonclip(sk, ctx.set, ctx.cell.train, &rec);
  Checkpoint ck;
  ck.add(sk.skeleton.params(), "skeletonclip.");
  ck.add(sk.text.params(), "skeletonclip.");
  save_run(out_dir(out, "align-skeletonclip"), "align-skeletonclip", ctx.cell, rec, ck);
  return 0;
}

int cmd_finetune(const ConfigArgs& args, const std::string& out) {
  const Context ctx = prepare(args.cell(Procedure::kVideoclip));
  RunRecord rec = new_record("finetune-videoclip", ctx.cell);
  VideoClipModel vc = make_videoclip(ctx.cell.model, ctx.cell.data, ctx.cell.train.seed);
  finetune_videoclip(vc, ctx.set, ctx.cell.train, &rec);
  Checkpoint ck;
  ck.add(vc.video.params(), "videoclip.");
  ck.add(vc.text.params(), "videoclip.");
  save_run(out_dir(out, "finetune-videoclip"), "finetune-videoclip", ctx.cell, rec, ck);
  return 0;
}

struct ScdArgs {
  std::string kd_mode, distill, skeletonclip, videoclip;
  std::optional<double> alpha;
};

int cmd_train_scd(const ConfigArgs& args, const ScdArgs& s, const std::string& out) {
  CellConfig cell = args.cell(Procedure::kScd);
  if (!s.kd_mode.empty()) cell.train.loss.kd_mode = parse_kd_mode(s.kd_mode);
  if (!s.distill.empty()) cell.train.loss.distill = parse_distill_kind(s.distill);
  if (s.alpha) cell.train.loss.alpha = *s.alpha;
  cell.train.loss.validate();
  const Context ctx = prepare(cell);
  RunRecord rec = new_record("train-scd", cell);

  SkeletonClipModel sk = make_skeletonclip(cell.model, cell.data, cell.train.seed);
  if (!s.skeletonclip.empty()) {
    const Checkpoint ck = Checkpoint::load(s.skeletonclip);
    ck.restore(sk.skeleton.params(), "skeletonclip.");
    ck.restore(sk.text.params(), "skeletonclip.");
  } else if (cell.train.pretrain_skeletonclip) {
    ClassifierHead head =
        make_head(cell.model, static_cast<int>(ctx.set.class_ids.size()), cell.train.seed);
    pretrain_skeleton(sk.skeleton, head, ctx.set, cell.train, &rec);
    align_skeletonclip(sk, ctx.set, cell.train, &rec);
  }
  VideoClipModel vc = make_videoclip(cell.model, cell.data, cell.train.seed);
  if (!s.videoclip.empty()) {
    const Checkpoint ck = Checkpoint::load(s.videoclip);
    ck.restore(vc.video.params(), "videoclip.");
    ck.restore(vc.text.params(), "videoclip.");
  } else if (cell.train.pretrain_videoclip) {
    finetune_videoclip(vc, ctx.set, cell.train, &rec);
  }
  train_scd(vc, sk, ctx.set, cell.train, &rec);
  // Only the video-side dual encoder is the product.
  Checkpoint ck;
  ck.add(vc.video.params(), "videoclip.");
  ck.add(vc.text.params(), "videoclip.");
  save_run(out_dir(out, "train-scd"), "train-scd", cell, rec, ck);
  return 0;
}

int cmd_train_baseline(const ConfigArgs& args, const std::string& kind_text, const std::string& out) {
  const BaselineKind kind = parse_baseline_kind(kind_text);
  const Procedure proc = kind == BaselineKind::kTrimodal ? Procedure::kTrimodal : Procedure::kCrossproj;
  const CellConfig cell = args.cell(proc);
  const RunOutput run = run_cell("train-baseline-" + to_string(kind), cell, cell.train.seed);
  save_run(out_dir(out, "train-baseline-" + to_string(kind)), "train-baseline-" + to_string(kind), cell,
           run.record, run.checkpoint);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& split_text,
             const std::string& out, const std::string& saliency_dir) {
  const Checkpoint ck = Checkpoint::load(ckpt_path);
  const CellConfig c = config_of(ck);
  const synth::Dataset ds =
      data_path.empty() ? synth::generate_dataset(c.data) : synth::read_dataset(data_path);
  const SplitSide side = parse_split_side(split_text);
  const LoadedModels m = load_models(ck, c);

  std::optional<ZeroShotReport> report;
  if (m.video) {
    report = evaluate_split(VideoTextModel(m.video->video, m.video->text), ds, ds.split, side);
  } else if (m.skeleton) {
    report = evaluate_split(SkeletonTextModel(m.skeleton->skeleton, m.skeleton->text), ds, ds.split, side);
  } else {
    throw ConfigError(ckpt_path + ": no video or skeleton dual encoder to evaluate");
  }
  const std::string json = report->to_json() + "\n";
  if (out.empty()) {
    std::cout << json;
  } else {
    write_text_file(out, json);
    std::cout << "top1 " << format_double(report->top1) << " over " << report->samples
              << " samples, wrote " << out << "\n";
  }
  if (!saliency_dir.empty()) {
    if (!m.video) throw ConfigError("--saliency-dir needs a video-side checkpoint");
    const int cls = first_leg_class(ds);
    if (cls < 0) throw ConfigError("dataset has no leg-motion class");
    fs::create_directories(saliency_dir);
    const TextPrompt prompt = ds.class_prompt(cls);
    int k = 0;
    for (const synth::Triplet* tr : ds.samples_of({cls})) {
      const Mat sal = saliency_map(m.video->video, m.video->text, tr->video, prompt);
      const std::string stem = "class" + std::to_string(cls) + "_sample" + std::to_string(k++);
      write_saliency_pgm(sal, ds.config.height, ds.config.width, fs::path(saliency_dir) / (stem + ".pgm"));
      write_saliency_raw(sal, ds.config.height, ds.config.width, fs::path(saliency_dir) / (stem + ".sal"));
    }
    std::cout << "wrote " << k << " saliency maps to " << saliency_dir << "\n";
  }
  return 0;
}

// Video encoder and projectors of an lvlm checkpoint. The skeleton projector
// is never loaded: generation is skeleton-free.
struct LoadedLvlm {
  CellConfig cell;
  synth::Dataset dataset;
  VideoClipModel videoclip;
  lvlm::ToyCausalLM lm;
  lvlm::Projectors projectors;
};

LoadedLvlm load_lvlm(const Checkpoint& ck) {
  const CellConfig c = config_of(ck);
  if (!ck.contains("lvlm.projector.visual.weight")) {
    throw ConfigError("checkpoint has no LVLM projector");
  }
  VideoClipModel vc = make_videoclip(c.model, c.data, c.train.seed);
  ck.restore(vc.video.params(), "videoclip.");
  lvlm::ToyCausalLM lm;
  lvlm::ProjectorConfig pc;
  pc.d_v = vc.video.d_out();
  pc.d_s = c.model.skeleton.d_out;
  pc.n_v = c.data.video_frames;
  pc.n_s = c.data.skeleton_frames;
  pc.k = lm.width();
  lvlm::Projectors proj(pc, false, c.lvlm.seed);
  ck.restore(proj.params(), "lvlm.");
  return LoadedLvlm{c, synth::generate_dataset(c.data), std::move(vc), std::move(lm), std::move(proj)};
}

int cmd_train_lvlm(const ConfigArgs& args, const std::string& use_skeleton, const std::string& out) {
  CellConfig cell = args.cell(Procedure::kLvlm);
  if (!use_skeleton.empty()) {
    KvConfig b;
    b.set("v", use_skeleton);
    cell.lvlm.use_skeleton = b.get_bool("v", true);
  }
  const std::string name = cell.lvlm.use_skeleton ? "train-lvlm-skeleton" : "train-lvlm-video";
  const RunOutput run = run_cell(name, cell, cell.lvlm.seed);
  const fs::path dir = out_dir(out, name);
  save_run(dir, name, cell, run.record, run.checkpoint);

  std::ostringstream nll;
  nll << "metric\tvalue\n";
  for (const auto& [k, v] : run.record.metrics()) nll << k << "\t" << format_double(v) << "\n";
  write_text_file(dir / "nll.tsv", nll.str());

  Checkpoint ck = run.checkpoint;
  ck.meta = cell.to_kv();
  const LoadedLvlm l = load_lvlm(ck);
  const lvlm::CaptionSplit split =
      lvlm::make_caption_split(l.dataset, l.videoclip.video, nullptr, cell.lvlm.holdout_fraction);
  std::ostringstream caps;
  caps << "class\treference\tgenerated\n";
  const auto& vocab = synth::Vocabulary::instance();
  for (const lvlm::CaptionExample& ex : split.heldout) {
    const auto ids = lvlm::generate_caption(l.lm, l.projectors.visual(), l.projectors.params(),
                                            ex.visual, cell.lvlm.query, cell.lvlm.max_len);
    caps << ex.class_id << "\t" << vocab.detokenize(ex.caption) << "\t" << vocab.detokenize(ids) << "\n";
  }
  write_text_file(dir / "captions.tsv", caps.str());
  for (const auto& [k, v] : run.record.metrics()) std::cout << k << " " << format_double(v) << "\n";
  return 0;
}

int cmd_caption(const std::string& ckpt_path, int video_id, const std::string& query, int max_len) {
  const LoadedLvlm l = load_lvlm(Checkpoint::load(ckpt_path));
  if (video_id < 0 || video_id >= static_cast<int>(l.dataset.triplets.size())) {
    throw ConfigError("--video must be in [0, " + std::to_string(l.dataset.triplets.size()) + ")");
  }
  const synth::Triplet& tr = l.dataset.triplets[static_cast<std::size_t>(video_id)];
  const std::string q = query.empty() ? l.cell.lvlm.query : query;
  std::cout << lvlm::generate_caption_text(l.lm, l.projectors, l.videoclip.video, tr.video, q,
                                           max_len > 0 ? max_len : l.cell.lvlm.max_len)
            << "\n";
  return 0;
}

int cmd_run_plan(const std::string& file, int workers) {
  ExperimentPlan plan = ExperimentPlan::load(file);
  if (const char* env = std::getenv("SKI_OUTPUT_ROOT"); env && *env) plan.output_root = env;
  if (workers > 0) plan.workers = workers;
  const PlanOutcome o = run_plan(plan, &std::cout);
  std::cout << "executed " << o.executed << ", skipped " << o.skipped << "\n"
            << "summary " << o.summary_tsv.string() << "\n";
  return 0;
}

int cmd_sweep_alpha(const ConfigArgs& args, const std::vector<double>& alphas,
                    const std::vector<std::uint64_t>& seeds, const std::string& out, int workers) {
  const CellSpec base{"scd", args.cell(Procedure::kScd)};
  const AlphaSweep sweep = sweep_alpha(base, alphas, seeds.empty() ? std::vector<std::uint64_t>{1} : seeds,
                                       out_dir(out, "alpha-sweep"), workers, &std::cout);
  std::cout << read_text_file(sweep.table) << "chart " << sweep.chart.string() << "\n";
  return 0;
}

int cmd_emit_summary(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const fs::path target = out.empty() ? output_root() : fs::path(out);
  emit_summary(paths, target);
  std::cout << read_text_file(target / "summary.tsv");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ski: skeleton-induced video-language workbench"};
  app.require_subcommand(1);

  ConfigArgs cfg;
  std::string out, init, ckpt, data, split = "unseen", saliency_dir, kind, use_skeleton, query, plan_file;
  ScdArgs scd;
  int video_id = 0, max_len = 0, workers = 0;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> dirs;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset and split file");
  cfg.attach(gen);
  gen->add_option("--out", out, "dataset container path")->required();

  auto* inspect = app.add_subcommand("inspect-ckpt", "print checkpoint arrays, shapes and norms");
  inspect->add_option("file", ckpt)->required();

  auto* pre = app.add_subcommand("pretrain-skeleton", "skeleton action-recognition pretraining");
  cfg.attach(pre);
  pre->add_option("--out", out, "run directory");

  auto* align = app.add_subcommand("align-skeletonclip", "align the skeleton encoder to frozen text");
  cfg.attach(align);
  align->add_option("--init", init, "checkpoint from pretrain-skeleton");
  align->add_option("--out", out, "run directory");

  auto* fine = app.add_subcommand("finetune-videoclip", "fine-tune the video-language dual encoder");
  cfg.attach(fine);
  fine->add_option("--out", out, "run directory");

  auto* tscd = app.add_subcommand("train-scd", "SkeletonCLIP distillation into VideoCLIP");
  cfg.attach(tscd);
  tscd->add_option("--kd-mode", scd.kd_mode, "online, offline, feature or feature-proj");
  tscd->add_option("--distill", scd.distill, "mse, kl or contrastive");
  tscd->add_option("--alpha", scd.alpha, "distillation weight");
  tscd->add_option("--skeletonclip", scd.skeletonclip, "checkpoint from align-skeletonclip");
  tscd->add_option("--videoclip", scd.videoclip, "checkpoint from finetune-videoclip");
  tscd->add_option("--out", out, "run directory");

  auto* base = app.add_subcommand("train-baseline", "tri-modal or cross-projection alignment");
  cfg.attach(base);
  base->add_option("--kind", kind, "trimodal or crossproj")->required();
  base->add_option("--out", out, "run directory");

  auto* ev = app.add_subcommand("eval", "zero-shot evaluation of a checkpoint");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--data", data, "dataset container (default: regenerate from the checkpoint config)");
  ev->add_option("--split", split, "seen or unseen");
  ev->add_option("--out", out, "report path (default: stdout)");
  ev->add_option("--saliency-dir", saliency_dir, "write leg-class saliency maps here");

  auto* tl = app.add_subcommand("train-lvlm", "train LVLM projectors into the frozen toy LM");
  cfg.attach(tl);
  tl->add_option("--use-skeleton", use_skeleton, "true or false");
  tl->add_option("--out", out, "run directory");

  auto* cap = app.add_subcommand("caption", "greedy skeleton-free caption for one sample");
  cap->add_option("--ckpt", ckpt)->required();
  cap->add_option("--video", video_id, "sample index in the checkpoint's dataset")->required();
  cap->add_option("--query", query);
  cap->add_option("--max-len", max_len);

  auto* rp = app.add_subcommand("run-plan", "run every (cell, seed) of a plan file");
  rp->add_option("plan", plan_file)->required();
  rp->add_option("--workers", workers);

  auto* sw = app.add_subcommand("sweep-alpha", "SCD accuracy against alpha");
  cfg.attach(sw);
  sw->add_option("--alphas", alphas)->required()->delimiter(',');
  sw->add_option("--seeds", seeds)->delimiter(',');
  sw->add_option("--out", out, "output root");
  sw->add_option("--workers", workers);

  auto* es = app.add_subcommand("emit-summary", "summary table and chart over run directories");
  es->add_option("dirs", dirs)->required();
  es->add_option("--out", out, "directory for summary.tsv and summary.svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(cfg, out);
    if (inspect->parsed()) return cmd_inspect(ckpt);
    if (pre->parsed()) return cmd_pretrain(cfg, out);
    if (align->parsed()) return cmd_align(cfg, init, out);
    if (fine->parsed()) return cmd_finetune(cfg, out);
    if (tscd->parsed()) return cmd_train_scd(cfg, scd, out);
    if (base->parsed()) return cmd_train_baseline(cfg, kind, out);
    if (ev->parsed()) return cmd_eval(ckpt, data, split, out, saliency_dir);
    if (tl->parsed()) return cmd_train_lvlm(cfg, use_skeleton, out);
    if (cap->parsed()) return cmd_caption(ckpt, video_id, query, max_len);
    if (rp->parsed()) return cmd_run_plan(plan_file, workers);
    if (sw->parsed()) return cmd_sweep_alpha(cfg, alphas, seeds, out, std::max(1, workers));
    if (es->parsed()) return cmd_emit_summary(dirs, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeExit;
  }
  return kConfigExit;
}
