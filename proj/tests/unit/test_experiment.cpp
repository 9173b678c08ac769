#include "ski/error.hpp"
#include "ski/experiment.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace ski;
using ski::testing::fresh_dir;
using ski::testing::tiny_kv;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentPlan plan_from(const std::string& extra) { return ExperimentPlan::from_kv(KvConfig::parse(tiny_kv() + extra)); }

CellSpec tiny_cell(const std::string& name, const std::string& procedure) {
  KvConfig kv = KvConfig::parse(tiny_kv());
  kv.set("procedure", procedure);
  return CellSpec{name, CellConfig::from_kv(kv)};
}

}  // namespace

TEST_CASE("plan parsing: shared keys, overrides and errors") {
  const ExperimentPlan p = plan_from(
      "plan.name = t\nplan.seeds = 3, 1\nplan.output = out\nplan.workers = 2\n"
      "plan.cells = a, b\ncell.a.procedure = videoclip\ncell.b.procedure = scd\n"
      "cell.b.loss.alpha = 0.5\n");
  REQUIRE(p.cells.size() == 2);
  CHECK(p.name == "t");
  CHECK(p.seeds == std::vector<std::uint64_t>{3, 1});
  CHECK(p.workers == 2);
  CHECK(p.cells[0].config.procedure == Procedure::kVideoclip);
  CHECK(p.cells[1].config.train.loss.alpha == 0.5);
  CHECK(p.cells[0].config.train.loss.alpha == 10.0);
  CHECK(p.cells[0].config.data.num_classes == 4);

  CHECK_THROWS_AS(plan_from("plan.cells = a, a\ncell.a.procedure = scd\n"), ConfigError);
  CHECK_THROWS_AS(plan_from("plan.cells = a\n"), ConfigError);
  CHECK_THROWS_AS(plan_from("plan.cells = a\ncell.a.procedure = scd\ncell.z.procedure = scd\n"), ConfigError);
  CHECK_THROWS_AS(plan_from("plan.cells = a\ncell.a.procedure = dance\n"), ConfigError);
  CHECK_THROWS_AS(plan_from("plan.cells = a\nplan.seeds = 1, 1\ncell.a.procedure = scd\n"), ConfigError);
  CHECK_THROWS_AS(plan_from("plan.cells = a\nplan.workers = 0\ncell.a.procedure = scd\n"), ConfigError);
  CHECK(parse_procedure("crossproj") == Procedure::kCrossproj);
  CHECK(to_string(Procedure::kLvlm) == "lvlm");
}

TEST_CASE("cell configs round-trip through key-value text") {
  const CellSpec c = tiny_cell("x", "scd");
  const CellConfig back = CellConfig::from_kv(c.config.to_kv());
  CHECK(back.to_kv().canonical() == c.config.to_kv().canonical());
  const CellConfig seeded = c.config.with_seed(9);
  CHECK(seeded.data.seed == 9);
  CHECK(seeded.train.seed == 9);
  CHECK(seeded.lvlm.seed == 9);
}

TEST_CASE("a named cell re-run with the same seed is byte-identical") {
  for (const char* proc : {"videoclip", "scd", "trimodal"}) {
    const CellSpec c = tiny_cell("rep", proc);
    const RunOutput a = run_cell(c.name, c.config, 2);
    const RunOutput b = run_cell(c.name, c.config, 2);
    CHECK(a.record.to_jsonl() == b.record.to_jsonl());
    CHECK(a.checkpoint.serialize() == b.checkpoint.serialize());
    CHECK(a.eval_json == b.eval_json);
    CHECK(a.record.has_metric("unseen_top1"));
  }
}

TEST_CASE("pretraining flags decide which phases run") {
  CellSpec c = tiny_cell("m", "scd");
  const auto phases = [](const RunRecord& r) {
    std::vector<std::string> out;
    for (const auto& e : r.epochs()) {
      if (out.empty() || out.back() != e.phase) out.push_back(e.phase);
    }
    return out;
  };
  CHECK(phases(run_cell("m", c.config, 1).record) ==
        std::vector<std::string>{"pretrain", "align", "finetune", "scd"});
  c.config.train.pretrain_skeletonclip = false;
  CHECK(phases(run_cell("m", c.config, 1).record) == std::vector<std::string>{"finetune", "scd"});
  c.config.train.pretrain_videoclip = false;
  CHECK(phases(run_cell("m", c.config, 1).record) == std::vector<std::string>{"scd"});
}

TEST_CASE("run_plan writes one directory per seed, resumes, and refuses collisions") {
  const fs::path root = fresh_dir("plan");
  ExperimentPlan p = plan_from("plan.cells = v\nplan.seeds = 1, 2\ncell.v.procedure = videoclip\n");
  p.output_root = root;
  const PlanOutcome first = run_plan(p);
  CHECK(first.executed == 2);
  CHECK(first.skipped == 0);
  for (std::uint64_t s : {1, 2}) {
    const fs::path dir = run_directory(root, "v", s);
    CHECK(dir == root / "v" / ("seed-" + std::to_string(s)));
    for (const char* f : {"config.kv", "record.jsonl", "timings.jsonl", "model.ckpt", "eval.json"}) {
      CHECK(fs::exists(dir / f));
    }
  }
  const std::string record = slurp(run_directory(root, "v", 1) / "record.jsonl");
  const std::string summary = slurp(first.summary_tsv);

  const PlanOutcome again = run_plan(p);
  CHECK(again.executed == 0);
  CHECK(again.skipped == 2);
  CHECK(slurp(run_directory(root, "v", 1) / "record.jsonl") == record);
  CHECK(slurp(again.summary_tsv) == summary);

  ExperimentPlan changed = p;
  changed.cells[0].config.train.lr_finetune = 0.02;
  CHECK_THROWS_AS(run_plan(changed), ConfigError);

  // An interrupted run (no config.kv yet) is redone.
  fs::remove(run_directory(root, "v", 2) / "config.kv");
  const PlanOutcome redo = run_plan(p);
  CHECK(redo.executed == 1);
  CHECK(slurp(run_directory(root, "v", 2) / "record.jsonl").size() > 0);
}

TEST_CASE("summaries: statistics, harmonic column, stability and corrupt records") {
  const fs::path root = fresh_dir("summary");
  ExperimentPlan p = plan_from(
      "plan.cells = b, a\nplan.seeds = 1, 2, 3\ncell.a.procedure = skeletonclip\n"
      "cell.b.procedure = crossproj\n");
  p.output_root = root;
  const PlanOutcome out = run_plan(p);
  const auto rows = summarize(out.run_dirs);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].cell == "a");
  CHECK(rows[1].cell == "b");
  CHECK(rows[0].runs == 3);

  // Independent recomputation from the stored records.
  std::vector<double> unseen, seen;
  for (std::uint64_t s : {1, 2, 3}) {
    const RunRecord r = RunRecord::load(run_directory(root, "a", s) / "record.jsonl");
    unseen.push_back(r.metric("unseen_top1"));
    seen.push_back(r.metric("seen_top1"));
  }
  const double mean = (unseen[0] + unseen[1] + unseen[2]) / 3.0;
  double ss = 0.0;
  for (double u : unseen) ss += (u - mean) * (u - mean);
  const double seen_mean = (seen[0] + seen[1] + seen[2]) / 3.0;
  CHECK(rows[0].mean("unseen_top1") == doctest::Approx(mean).epsilon(1e-12));
  const auto k = static_cast<std::size_t>(
      std::find(rows[0].metric_names.begin(), rows[0].metric_names.end(), "unseen_top1") -
      rows[0].metric_names.begin());
  CHECK(rows[0].stds[k] == doctest::Approx(std::sqrt(ss / 2.0)).epsilon(1e-12));
  if (mean > 0 && seen_mean > 0) {
    CHECK(rows[0].harmonic == doctest::Approx(2.0 / (1.0 / mean + 1.0 / seen_mean)).epsilon(1e-12));
  }

  const std::string tsv = summary_tsv(rows);
  CHECK(tsv == summary_tsv(summarize(out.run_dirs)));
  CHECK(tsv.find("harmonic_seen_unseen_of_means") != std::string::npos);
  CHECK(tsv.find("unseen_top1_mean\tunseen_top1_std") != std::string::npos);
  CHECK(summary_svg(rows).find("<svg") == 0);

  std::ofstream(run_directory(root, "a", 2) / "record.jsonl") << "{\"broken\n";
  try {
    summarize(out.run_dirs);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find((run_directory(root, "a", 2) / "record.jsonl").string()) !=
          std::string::npos);
  }
}

TEST_CASE("bundled plans parse") {
  const fs::path plans = fs::path(SKI_SOURCE_DIR) / "plans";
  const ExperimentPlan kd = ExperimentPlan::load(plans / "kd_variants.cfg");
  CHECK(kd.cells.size() == 4);
  CHECK(kd.seeds.size() == 5);
  for (const char* f : {"baselines.cfg", "distill_losses.cfg", "text_encoder.cfg",
                        "pretraining_matrix.cfg", "lvlm.cfg", "smoke.cfg"}) {
    CHECK_NOTHROW(ExperimentPlan::load(plans / f));
  }
  CHECK(ExperimentPlan::load(plans / "pretraining_matrix.cfg").cells.size() == 4);
}

TEST_CASE("alpha sweep: one row per alpha, log chart, alpha 0 matches the video baseline") {
  const fs::path root = fresh_dir("sweep");
  const CellSpec base = tiny_cell("scd", "scd");
  const AlphaSweep sweep = sweep_alpha(base, {0.0, 0.1, 1.0, 10.0, 100.0}, {1}, root);
  CHECK(sweep.rows.size() == 5);
  const std::string table = slurp(sweep.table);
  CHECK(std::count(table.begin(), table.end(), '\n') == 6);
  const std::string svg = slurp(sweep.chart);
  CHECK(svg.find("data-x-scale=\"log10\"") != std::string::npos);
  CHECK(svg.find(">0<") != std::string::npos);

  const CellSpec video = tiny_cell("video", "videoclip");
  const RunOutput v = run_cell(video.name, video.config, 1);
  CHECK(sweep.rows[0].mean("unseen_top1") == v.record.metric("unseen_top1"));
  CHECK(sweep.rows[0].mean("seen_top1") == v.record.metric("seen_top1"));

  CHECK_THROWS_AS(sweep_alpha(base, {}, {1}, root), ConfigError);
  CHECK_THROWS_AS(sweep_alpha(base, {-1.0}, {1}, root), ConfigError);
  CHECK_THROWS_AS(sweep_alpha(tiny_cell("v", "videoclip"), {1.0}, {1}, root), ConfigError);
}

TEST_CASE("log-x line chart places zero one decade left") {
  const std::string svg = line_chart_svg({{0.0, 0.5}, {1.0, 0.6}, {10.0, 0.7}}, "alpha", "acc");
  CHECK(svg.find("data-x-scale=\"log10\"") != std::string::npos);
  CHECK(svg.find("class=\"xtick\"") != std::string::npos);
  CHECK(svg.find(">0<") != std::string::npos);
  CHECK(svg.find(">10<") != std::string::npos);
}
