#include "ski/experiment.hpp"

#include "ski/binary_io.hpp"
#include "ski/error.hpp"
#include "ski/zseval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace ski {

namespace fs = std::filesystem;

Procedure parse_procedure(const std::string& text) {
  if (text == "videoclip") return Procedure::kVideoclip;
  if (text == "skeletonclip") return Procedure::kSkeletonclip;
  if (text == "scd") return Procedure::kScd;
  if (text == "trimodal") return Procedure::kTrimodal;
  if (text == "crossproj") return Procedure::kCrossproj;
  if (text == "fusion") return Procedure::kFusion;
  if (text == "lvlm") return Procedure::kLvlm;
  throw ConfigError("unknown procedure `" + text +
                    "` (expected videoclip, skeletonclip, scd, trimodal, crossproj, fusion or lvlm)");
}

std::string to_string(Procedure procedure) {
  switch (procedure) {
    case Procedure::kVideoclip: return "videoclip";
    case Procedure::kSkeletonclip: return "skeletonclip";
    case Procedure::kScd: return "scd";
    case Procedure::kTrimodal: return "trimodal";
    case Procedure::kCrossproj: return "crossproj";
    case Procedure::kFusion: return "fusion";
    case Procedure::kLvlm: return "lvlm";
  }
  return "?";
}

EvalSpec EvalSpec::from_kv(const KvConfig& kv) {
  EvalSpec e;
  e.saliency = kv.get_bool("saliency", e.saliency);
  e.saliency_samples = kv.get_int("saliency_samples", e.saliency_samples);
  if (e.saliency_samples < 1) throw ConfigError("eval.saliency_samples must be positive");
  return e;
}

KvConfig EvalSpec::to_kv() const {
  KvConfig kv;
  kv.set("saliency", saliency ? "true" : "false");
  kv.set("saliency_samples", std::to_string(saliency_samples));
  return kv;
}

CellConfig CellConfig::from_kv(const KvConfig& kv) {
  if (!kv.has("procedure")) throw ConfigError("cell config is missing `procedure`");
  CellConfig c;
  c.procedure = parse_procedure(kv.get("procedure"));
  c.data = synth::DatasetConfig::from_kv(kv.scoped("data"));
  c.data.validate();
  c.model = ModelConfig::from_kv(kv);
  c.train = TrainConfig::from_kv(kv);
  c.lvlm = lvlm::LvlmConfig::from_kv(kv.scoped("lvlm"));
  c.eval = EvalSpec::from_kv(kv.scoped("eval"));
  return c;
}

KvConfig CellConfig::to_kv() const {
  KvConfig kv = data.to_kv().prefixed("data");
  kv = kv.merged(model.to_kv()).merged(train.to_kv()).merged(lvlm.to_kv());
  kv = kv.merged(eval.to_kv().prefixed("eval"));
  kv.set("procedure", to_string(procedure));
  return kv;
}

CellConfig CellConfig::with_seed(std::uint64_t seed) const {
  CellConfig c = *this;
  c.data.seed = seed;
  c.train.seed = seed;
  c.lvlm.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------
// Plans

namespace {

std::vector<std::uint64_t> parse_seeds(const KvConfig& kv, const std::string& key) {
  std::vector<std::uint64_t> seeds;
  for (const std::string& item : kv.get_list(key)) {
    KvConfig one;
    one.set("s", item);
    seeds.push_back(one.get_u64("s", 0));
  }
  if (seeds.empty()) throw ConfigError(key + " must list at least one seed");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError(key + " lists a seed twice");
  return seeds;
}

bool valid_cell_name(const std::string& name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.';
  });
}

}  // namespace

ExperimentPlan ExperimentPlan::from_kv(const KvConfig& kv) {
  ExperimentPlan plan;
  plan.name = kv.get("plan.name", plan.name);
  if (kv.has("plan.seeds")) plan.seeds = parse_seeds(kv, "plan.seeds");
  plan.output_root = kv.get("plan.output", plan.output_root.string());
  plan.workers = kv.get_int("plan.workers", plan.workers);
  if (plan.workers < 1) throw ConfigError("plan.workers must be at least 1");
  if (!kv.has("plan.cells")) throw ConfigError("plan.cells is missing");
  const std::vector<std::string> names = kv.get_list("plan.cells");
  if (names.empty()) throw ConfigError("plan.cells is empty");

  KvConfig shared;
  for (const auto& [key, value] : kv.entries()) {
    if (key.starts_with("plan.") || key.starts_with("cell.")) continue;
    shared.set(key, value);
  }
  std::set<std::string> seen;
  for (const std::string& name : names) {
    if (!valid_cell_name(name)) throw ConfigError("invalid cell name `" + name + "`");
    if (!seen.insert(name).second) throw ConfigError("duplicate cell name `" + name + "`");
    const KvConfig merged = shared.merged(kv.scoped("cell." + name));
    try {
      plan.cells.push_back(CellSpec{name, CellConfig::from_kv(merged)});
    } catch (const ConfigError& e) {
      throw ConfigError("cell `" + name + "`: " + e.what());
    }
  }
  for (const auto& [key, value] : kv.entries()) {
    if (!key.starts_with("cell.")) continue;
    const std::string rest = key.substr(5);
    const auto dot = rest.find('.');
    const std::string cell = rest.substr(0, dot);
    if (!seen.contains(cell)) {
      throw ConfigError("`" + key + "` configures cell `" + cell + "`, which plan.cells does not list");
    }
  }
  return plan;
}

ExperimentPlan ExperimentPlan::load(const fs::path& path) { return from_kv(KvConfig::load(path)); }

// ---------------------------------------------------------------------------
// One run

namespace {

void add_zero_shot(const ZeroShotModel& model, const synth::Dataset& ds, RunRecord& rec,
                   std::string& json) {
  const ZeroShotReport seen = evaluate_split(model, ds, ds.split, SplitSide::kSeen);
  const ZeroShotReport unseen = evaluate_split(model, ds, ds.split, SplitSide::kUnseen);
  rec.add_metric("seen_top1", seen.top1);
  rec.add_metric("unseen_top1", unseen.top1);
  rec.add_metric("harmonic_seen_unseen",
                 seen.top1 > 0.0 && unseen.top1 > 0.0 ? harmonic_mean({seen.top1, unseen.top1}) : 0.0);
  json = "{\"seen\":" + seen.to_json() + ",\"unseen\":" + unseen.to_json() + "}";
}

void add_fusion(const ZeroShotModel& video, const ZeroShotModel& skeleton, const synth::Dataset& ds,
                RunRecord& rec, std::string& json) {
  const ZeroShotReport seen = evaluate_fusion(video, skeleton, ds, ds.split, SplitSide::kSeen);
  const ZeroShotReport unseen = evaluate_fusion(video, skeleton, ds, ds.split, SplitSide::kUnseen);
  rec.add_metric("seen_top1", seen.top1);
  rec.add_metric("unseen_top1", unseen.top1);
  rec.add_metric("harmonic_seen_unseen",
                 seen.top1 > 0.0 && unseen.top1 > 0.0 ? harmonic_mean({seen.top1, unseen.top1}) : 0.0);
  json = "{\"seen\":" + seen.to_json() + ",\"unseen\":" + unseen.to_json() + "}";
}

void add_saliency(const VideoClipModel& m, const synth::Dataset& ds, const EvalSpec& eval,
                  RunRecord& rec) {
  if (!eval.saliency) return;
  const SaliencySummary s = leg_saliency(m.video, m.text, ds, eval.saliency_samples);
  rec.add_metric("saliency_class", s.class_id);
  rec.add_metric("saliency_inside", s.inside);
  rec.add_metric("saliency_outside", s.outside);
}

SkeletonClipModel trained_skeletonclip(const CellConfig& c, const synth::Dataset& ds,
                                       const TrainingSet& set, bool pretrain, RunRecord& rec) {
  SkeletonClipModel sk = make_skeletonclip(c.model, c.data, c.train.seed);
  if (pretrain) {
    ClassifierHead head = make_head(c.model, static_cast<int>(set.class_ids.size()), c.train.seed);
    pretrain_skeleton(sk.skeleton, head, set, c.train, &rec);
    align_skeletonclip(sk, set, c.train, &rec);
  }
  (void)ds;
  return sk;
}

VideoClipModel trained_videoclip(const CellConfig& c, const TrainingSet& set, bool finetune,
                                 RunRecord& rec) {
  VideoClipModel vc = make_videoclip(c.model, c.data, c.train.seed);
  if (finetune) finetune_videoclip(vc, set, c.train, &rec);
  return vc;
}

}  // namespace

RunOutput run_cell(const std::string& cell_name, const CellConfig& config, std::uint64_t seed) {
  const CellConfig c = config.with_seed(seed);
  const KvConfig resolved = c.to_kv();
  const synth::Dataset ds = synth::generate_dataset(c.data);
  const TrainingSet set = make_training_set(ds);
  RunOutput out;
  RunRecord& rec = out.record;
  rec = RunRecord(to_string(c.procedure), resolved.fingerprint(), seed);
  Checkpoint& ck = out.checkpoint;
  ck.fingerprint = resolved.fingerprint();
  ck.meta = resolved;
  ck.meta.set("cell", cell_name);

  switch (c.procedure) {
    case Procedure::kVideoclip: {
      VideoClipModel vc = trained_videoclip(c, set, true, rec);
      extend_videoclip(vc, set, c.train, &rec);
      add_zero_shot(VideoTextModel(vc.video, vc.text), ds, rec, out.eval_json);
      add_saliency(vc, ds, c.eval, rec);
      ck.add(vc.video.params(), "videoclip.");
      ck.add(vc.text.params(), "videoclip.");
      break;
    }
    case Procedure::kSkeletonclip: {
      SkeletonClipModel sk = trained_skeletonclip(c, ds, set, true, rec);
      add_zero_shot(SkeletonTextModel(sk.skeleton, sk.text), ds, rec, out.eval_json);
      ck.add(sk.skeleton.params(), "skeletonclip.");
      ck.add(sk.text.params(), "skeletonclip.");
      break;
    }
    case Procedure::kScd: {
      SkeletonClipModel sk = trained_skeletonclip(c, ds, set, c.train.pretrain_skeletonclip, rec);
      VideoClipModel vc = trained_videoclip(c, set, c.train.pretrain_videoclip, rec);
      train_scd(vc, sk, set, c.train, &rec);
      add_zero_shot(VideoTextModel(vc.video, vc.text), ds, rec, out.eval_json);
      add_saliency(vc, ds, c.eval, rec);
      // The product is the video-side dual encoder alone.
      ck.add(vc.video.params(), "videoclip.");
      ck.add(vc.text.params(), "videoclip.");
      break;
    }
    case Procedure::kTrimodal:
    case Procedure::kCrossproj: {
      SkeletonClipModel sk = make_skeletonclip(c.model, c.data, c.train.seed);
      ClassifierHead head = make_head(c.model, static_cast<int>(set.class_ids.size()), c.train.seed);
      pretrain_skeleton(sk.skeleton, head, set, c.train, &rec);
      VideoClipModel vc = trained_videoclip(c, set, true, rec);
      const BaselineKind kind =
          c.procedure == Procedure::kTrimodal ? BaselineKind::kTrimodal : BaselineKind::kCrossproj;
      train_baseline(kind, vc, sk.skeleton, set, c.train, &rec);
      add_zero_shot(SkeletonTextModel(sk.skeleton, vc.text), ds, rec, out.eval_json);
      ck.add(sk.skeleton.params(), "baseline.");
      ck.add(vc.video.params(), "videoclip.");
      ck.add(vc.text.params(), "videoclip.");
      break;
    }
    case Procedure::kFusion: {
      SkeletonClipModel sk = trained_skeletonclip(c, ds, set, true, rec);
      VideoClipModel vc = trained_videoclip(c, set, true, rec);
      extend_videoclip(vc, set, c.train, &rec);
      add_fusion(VideoTextModel(vc.video, vc.text), SkeletonTextModel(sk.skeleton, sk.text), ds, rec,
                 out.eval_json);
      ck.add(vc.video.params(), "videoclip.");
      ck.add(vc.text.params(), "videoclip.");
      ck.add(sk.skeleton.params(), "skeletonclip.");
      ck.add(sk.text.params(), "skeletonclip.");
      break;
    }
    case Procedure::kLvlm: {
      SkeletonClipModel sk = trained_skeletonclip(c, ds, set, true, rec);
      VideoClipModel vc = trained_videoclip(c, set, true, rec);
      const lvlm::ToyCausalLM lm;
      const bool use_sk = c.lvlm.use_skeleton;
      const lvlm::CaptionSplit split = lvlm::make_caption_split(
          ds, vc.video, use_sk ? &sk.skeleton : nullptr, c.lvlm.holdout_fraction);
      lvlm::ProjectorConfig pc;
      pc.d_v = vc.video.d_out();
      pc.d_s = sk.skeleton.d_out();
      pc.n_v = c.data.video_frames;
      pc.n_s = c.data.skeleton_frames;
      pc.k = lm.width();
      lvlm::Projectors proj(pc, use_sk, c.lvlm.seed);
      lvlm::train_projectors(lm, proj, split, c.lvlm, vc.video, use_sk ? &sk.skeleton : nullptr, &rec);
      const auto train_score = lvlm::teacher_forced_score(lm, proj, split.train, c.lvlm.query, use_sk);
      const auto held = lvlm::teacher_forced_score(lm, proj, split.heldout, c.lvlm.query, use_sk);
      rec.add_metric("train_nll", train_score.nll);
      rec.add_metric("heldout_nll", held.nll);
      rec.add_metric("heldout_next_token_accuracy", held.next_token_accuracy);
      if (use_sk) {
        const auto free = lvlm::teacher_forced_score(lm, proj, split.heldout, c.lvlm.query, false);
        rec.add_metric("heldout_nll_skeleton_free", free.nll);
      }
      const synth::Triplet& probe = ds.triplets.front();
      out.eval_json = "{\"lm_checksum\":\"" + hex64(lm.checksum()) + "\",\"probe_caption\":\"" +
                      lvlm::generate_caption_text(lm, proj, vc.video, probe.video, c.lvlm.query,
                                                  c.lvlm.max_len) +
                      "\",\"reference\":\"" + probe.caption + "\"}";
      ck.add(vc.video.params(), "videoclip.");
      ck.add(proj.params(), "lvlm.");
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plans on disk

fs::path run_directory(const fs::path& root, const std::string& cell, std::uint64_t seed) {
  return root / cell / ("seed-" + std::to_string(seed));
}

namespace {

std::string run_config_text(const std::string& cell, const CellConfig& config, std::uint64_t seed) {
  KvConfig kv = config.with_seed(seed).to_kv();
  kv.set("cell", cell);
  kv.set("seed", std::to_string(seed));
  return kv.canonical();
}

struct Job {
  const CellSpec* cell;
  std::uint64_t seed;
  fs::path dir;
  std::string config_text;
};

// True when the directory already holds this exact completed run.
bool completed(const Job& job) {
  const fs::path cfg = job.dir / "config.kv";
  if (!fs::exists(cfg)) return false;
  const std::string stored = read_text_file(cfg);
  if (stored == job.config_text) {
    return fs::exists(job.dir / "record.jsonl") && fs::exists(job.dir / "model.ckpt");
  }
  const std::string ours = hex64(fnv1a64(job.config_text));
  const std::string theirs = hex64(fnv1a64(stored));
  if (ours == theirs) {
    throw ConfigError("fingerprint collision in " + job.dir.string() +
                      ": same fingerprint, different config");
  }
  throw ConfigError(job.dir.string() + " holds a different config (fingerprint " + theirs +
                    ", plan wants " + ours + "); remove it or rename the cell");
}

void execute(const Job& job) {
  RunOutput out = run_cell(job.cell->name, job.cell->config, job.seed);
  fs::create_directories(job.dir);
  out.record.save(job.dir / "record.jsonl");
  write_text_file(job.dir / "timings.jsonl", out.record.timings_jsonl());
  out.checkpoint.save(job.dir / "model.ckpt");
  write_text_file(job.dir / "eval.json", out.eval_json + "\n");
  // Written last: its presence marks the run complete.
  write_text_file(job.dir / "config.kv", job.config_text);
}

}  // namespace

PlanOutcome run_plan(const ExperimentPlan& plan, std::ostream* log) {
  if (plan.cells.empty()) throw ConfigError("plan has no cells");
  std::vector<Job> jobs;
  PlanOutcome outcome;
  for (const CellSpec& cell : plan.cells) {
    for (std::uint64_t seed : plan.seeds) {
      Job job{&cell, seed, run_directory(plan.output_root, cell.name, seed),
              run_config_text(cell.name, cell.config, seed)};
      outcome.run_dirs.push_back(job.dir);
      if (completed(job)) {
        ++outcome.skipped;
        if (log) *log << "skip " << job.dir.string() << "\n";
      } else {
        jobs.push_back(std::move(job));
      }
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
        if (log) *log << "run  " << jobs[i].dir.string() << "\n" << std::flush;
      }
      try {
        execute(jobs[i]);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const int n_threads = std::min<int>(plan.workers, static_cast<int>(jobs.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  outcome.executed = static_cast<int>(jobs.size());

  fs::create_directories(plan.output_root);
  emit_summary(outcome.run_dirs, plan.output_root);
  outcome.summary_tsv = plan.output_root / "summary.tsv";
  outcome.summary_svg = plan.output_root / "summary.svg";
  return outcome;
}

// ---------------------------------------------------------------------------
// Summaries

double SummaryRow::mean(const std::string& metric) const {
  for (std::size_t i = 0; i < metric_names.size(); ++i) {
    if (metric_names[i] == metric) return means[i];
  }
  throw ContractViolation("summary row `" + cell + "` has no metric `" + metric + "`");
}

std::vector<SummaryRow> summarize(const std::vector<fs::path>& run_dirs) {
  struct Group {
    std::string procedure;
    std::map<std::string, std::vector<double>> values;
    std::vector<std::string> sources;
  };
  std::map<std::string, Group> groups;
  for (const fs::path& dir : run_dirs) {
    const fs::path cfg_path = dir / "config.kv";
    if (!fs::exists(cfg_path)) throw FormatError(cfg_path.string() + ": missing run config");
    const KvConfig cfg = KvConfig::load(cfg_path);
    if (!cfg.has("cell") || !cfg.has("procedure")) {
      throw FormatError(cfg_path.string() + ": run config lacks cell or procedure");
    }
    const RunRecord rec = RunRecord::load(dir / "record.jsonl");
    Group& g = groups[cfg.get("cell")];
    if (!g.procedure.empty() && g.procedure != cfg.get("procedure")) {
      throw FormatError(cfg_path.string() + ": cell `" + cfg.get("cell") +
                        "` appears with two procedures");
    }
    g.procedure = cfg.get("procedure");
    for (const auto& [name, value] : rec.metrics()) g.values[name].push_back(value);
    g.sources.push_back(dir.generic_string());
  }
  std::vector<SummaryRow> rows;
  for (const auto& [cell, g] : groups) {
    SummaryRow row;
    row.cell = cell;
    row.procedure = g.procedure;
    row.runs = static_cast<int>(g.sources.size());
    row.sources = g.sources;
    std::sort(row.sources.begin(), row.sources.end());
    for (const auto& [name, vals] : g.values) {
      double m = 0.0;
      for (double v : vals) m += v;
      m /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - m) * (v - m);
      const double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
      row.metric_names.push_back(name);
      row.means.push_back(m);
      row.stds.push_back(sd);
    }
    row.harmonic = std::nan("");
    const auto has = [&](const std::string& n) {
      return std::find(row.metric_names.begin(), row.metric_names.end(), n) != row.metric_names.end();
    };
    if (has("seen_top1") && has("unseen_top1")) {
      const double s = row.mean("seen_top1");
      const double u = row.mean("unseen_top1");
      row.harmonic = s > 0.0 && u > 0.0 ? harmonic_mean({s, u}) : 0.0;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string fixed(double v, int digits = 6) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::string summary_tsv(const std::vector<SummaryRow>& rows) {
  std::set<std::string> names;
  for (const SummaryRow& r : rows) names.insert(r.metric_names.begin(), r.metric_names.end());
  std::ostringstream out;
  out << "cell\tprocedure\truns";
  for (const std::string& n : names) out << "\t" << n << "_mean\t" << n << "_std";
  out << "\tharmonic_seen_unseen_of_means\tsources\n";
  for (const SummaryRow& r : rows) {
    out << r.cell << "\t" << r.procedure << "\t" << r.runs;
    for (const std::string& n : names) {
      const auto it = std::find(r.metric_names.begin(), r.metric_names.end(), n);
      if (it == r.metric_names.end()) {
        out << "\tNA\tNA";
      } else {
        const auto i = static_cast<std::size_t>(it - r.metric_names.begin());
        out << "\t" << fixed(r.means[i]) << "\t" << fixed(r.stds[i]);
      }
    }
    out << "\t" << fixed(r.harmonic) << "\t";
    for (std::size_t i = 0; i < r.sources.size(); ++i) out << (i ? "," : "") << r.sources[i];
    out << "\n";
  }
  return out.str();
}

std::string summary_svg(const std::vector<SummaryRow>& rows) {
  const int bar = 40, gap = 20, left = 60, top = 20, plot_h = 200;
  const int width = left + static_cast<int>(rows.size()) * (bar + gap) + gap;
  const int height = top + plot_h + 80;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width << "\" y2=\""
    << top + plot_h << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = top + plot_h - plot_h * k / 4.0;
    s << "<text x=\"" << left - 6 << "\" y=\"" << fixed(y + 4, 1) << "\" text-anchor=\"end\">"
      << fixed(k / 4.0, 2) << "</text>\n";
  }
  s << "<text x=\"14\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 14 " << top + plot_h / 2
    << ")\" text-anchor=\"middle\">unseen top-1</text>\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SummaryRow& r = rows[i];
    const auto it = std::find(r.metric_names.begin(), r.metric_names.end(), "unseen_top1");
    const int x = left + gap + static_cast<int>(i) * (bar + gap);
    if (it != r.metric_names.end()) {
      const auto k = static_cast<std::size_t>(it - r.metric_names.begin());
      const double m = std::clamp(r.means[k], 0.0, 1.0);
      const double h = plot_h * m;
      s << "<rect x=\"" << x << "\" y=\"" << fixed(top + plot_h - h, 2) << "\" width=\"" << bar
        << "\" height=\"" << fixed(h, 2) << "\" fill=\"#4a78b0\"/>\n";
      const double lo = top + plot_h - plot_h * std::clamp(r.means[k] - r.stds[k], 0.0, 1.0);
      const double hi = top + plot_h - plot_h * std::clamp(r.means[k] + r.stds[k], 0.0, 1.0);
      const int cx = x + bar / 2;
      s << "<line x1=\"" << cx << "\" y1=\"" << fixed(lo, 2) << "\" x2=\"" << cx << "\" y2=\""
        << fixed(hi, 2) << "\" stroke=\"black\"/>\n";
    }
    s << "<text x=\"" << x + bar / 2 << "\" y=\"" << top + plot_h + 14
      << "\" text-anchor=\"end\" transform=\"rotate(-40 " << x + bar / 2 << " " << top + plot_h + 14
      << ")\">" << xml_escape(r.cell) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void emit_summary(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  const auto rows = summarize(run_dirs);
  fs::create_directories(out_dir);
  write_text_file(out_dir / "summary.tsv", summary_tsv(rows));
  write_text_file(out_dir / "summary.svg", summary_svg(rows));
}

std::string line_chart_svg(const std::vector<LinePoint>& points, const std::string& x_label,
                           const std::string& y_label) {
  if (points.empty()) throw ContractViolation("line chart needs at least one point");
  double min_pos = 0.0;
  for (const LinePoint& p : points) {
    if (p.x < 0.0) throw ContractViolation("log-scaled chart cannot place negative x");
    if (p.x > 0.0 && (min_pos == 0.0 || p.x < min_pos)) min_pos = p.x;
  }
  if (min_pos == 0.0) min_pos = 1.0;
  const double zero_at = std::log10(min_pos) - 1.0;
  auto lx = [&](double x) { return x > 0.0 ? std::log10(x) : zero_at; };
  double x0 = lx(points.front().x), x1 = x0;
  double y0 = points.front().y, y1 = y0;
  for (const LinePoint& p : points) {
    x0 = std::min(x0, lx(p.x));
    x1 = std::max(x1, lx(p.x));
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  if (x1 - x0 < 1e-12) { x0 -= 0.5; x1 += 0.5; }
  y0 = std::min(y0, 0.0);
  y1 = std::max(y1, y0 + 1e-12);
  const double left = 60, top = 20, w = 360, h = 200;
  auto px = [&](double x) { return left + w * (lx(x) - x0) / (x1 - x0); };
  auto py = [&](double y) { return top + h - h * (y - y0) / (y1 - y0); };

  std::vector<LinePoint> sorted = points;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const LinePoint& a, const LinePoint& b) { return a.x < b.x; });
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + w + 20 << "\" height=\""
    << top + h + 50 << "\" font-family=\"sans-serif\" font-size=\"11\" data-x-scale=\"log10\">\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + h << "\" x2=\"" << left + w << "\" y2=\""
    << top + h << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + h
    << "\" stroke=\"black\"/>\n";
  for (const LinePoint& p : sorted) {
    s << "<text class=\"xtick\" x=\"" << fixed(px(p.x), 2) << "\" y=\"" << top + h + 14
      << "\" text-anchor=\"middle\">" << (p.x > 0.0 ? format_double(p.x) : "0") << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = y0 + (y1 - y0) * k / 4.0;
    s << "<text x=\"" << left - 6 << "\" y=\"" << fixed(py(v) + 4, 2) << "\" text-anchor=\"end\">"
      << fixed(v, 2) << "</text>\n";
  }
  s << "<polyline fill=\"none\" stroke=\"#4a78b0\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    s << (i ? " " : "") << fixed(px(sorted[i].x), 2) << "," << fixed(py(sorted[i].y), 2);
  }
  s << "\"/>\n";
  for (const LinePoint& p : sorted) {
    s << "<circle cx=\"" << fixed(px(p.x), 2) << "\" cy=\"" << fixed(py(p.y), 2)
      << "\" r=\"3\" fill=\"#4a78b0\"/>\n";
  }
  s << "<text x=\"" << left + w / 2 << "\" y=\"" << top + h + 36 << "\" text-anchor=\"middle\">"
    << xml_escape(x_label) << " (log scale)</text>\n";
  s << "<text x=\"14\" y=\"" << top + h / 2 << "\" transform=\"rotate(-90 14 " << top + h / 2
    << ")\" text-anchor=\"middle\">" << xml_escape(y_label) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

AlphaSweep sweep_alpha(const CellSpec& base, const std::vector<double>& alphas,
                       const std::vector<std::uint64_t>& seeds, const fs::path& output_root,
                       int workers, std::ostream* log) {
  if (alphas.empty()) throw ConfigError("alpha sweep needs at least one alpha");
  for (double a : alphas) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("alpha values must be finite and >= 0");
  }
  if (base.config.procedure != Procedure::kScd) throw ConfigError("alpha sweep needs an scd cell");
  ExperimentPlan plan;
  plan.name = "alpha_sweep";
  plan.seeds = seeds;
  plan.output_root = output_root;
  plan.workers = workers;
  for (double a : alphas) {
    CellSpec cell = base;
    cell.name = base.name + "-alpha-" + format_double(a);
    cell.config.train.loss.alpha = a;
    plan.cells.push_back(std::move(cell));
  }
  const PlanOutcome outcome = run_plan(plan, log);
  const auto all_rows = summarize(outcome.run_dirs);
  AlphaSweep sweep;
  sweep.alphas = alphas;
  std::vector<LinePoint> points;
  std::ostringstream table;
  table << "alpha\tunseen_top1_mean\tunseen_top1_std\tseen_top1_mean\truns\tcell\n";
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const std::string& name = plan.cells[i].name;
    const auto it = std::find_if(all_rows.begin(), all_rows.end(),
                                 [&](const SummaryRow& r) { return r.cell == name; });
    if (it == all_rows.end()) throw ContractViolation("alpha sweep lost cell " + name);
    sweep.rows.push_back(*it);
    const auto k = static_cast<std::size_t>(
        std::find(it->metric_names.begin(), it->metric_names.end(), "unseen_top1") -
        it->metric_names.begin());
    points.push_back({alphas[i], it->means[k]});
    table << format_double(alphas[i]) << "\t" << fixed(it->means[k]) << "\t" << fixed(it->stds[k])
          << "\t" << fixed(it->mean("seen_top1")) << "\t" << it->runs << "\t" << name << "\n";
  }
  sweep.table = output_root / "alpha_sweep.tsv";
  sweep.chart = output_root / "alpha_sweep.svg";
  write_text_file(sweep.table, table.str());
  write_text_file(sweep.chart, line_chart_svg(points, "alpha", "unseen top-1"));
  return sweep;
}

// ---------------------------------------------------------------------------

int first_leg_class(const synth::Dataset& dataset) {
  for (const synth::ActionSpec& a : dataset.actions) {
    if (synth::is_leg(a.motion.limb)) return a.class_id;
  }
  return -1;
}

SaliencySummary leg_saliency(const VideoEncoder& video, const TextEncoder& text,
                             const synth::Dataset& dataset, int samples) {
  SaliencySummary out;
  out.class_id = first_leg_class(dataset);
  if (out.class_id < 0) throw ContractViolation("dataset has no leg-motion class");
  const synth::ActionSpec& spec = dataset.action(out.class_id);
  const TextPrompt prompt = dataset.class_prompt(out.class_id);
  const auto& cfg = dataset.config;
  const synth::RenderSettings rs{cfg.video_frames, cfg.height, cfg.width, cfg.channels};
  int used = 0;
  for (const synth::Triplet* tr : dataset.samples_of({out.class_id})) {
    if (used >= samples) break;
    const Mat sal = saliency_map(video, text, tr->video, prompt);
    const Mat mask = synth::render_limb_mask(tr->skeleton, synth::Camera{},
                                             synth::limb_joints(spec.motion.limb), rs);
    const MaskContrast mc = mask_contrast(sal, mask);
    out.inside += mc.inside_mean;
    out.outside += mc.outside_mean;
    ++used;
  }
  if (used == 0) throw ContractViolation("no samples for the leg-motion class");
  out.inside /= used;
  out.outside /= used;
  return out;
}

}  // namespace ski
