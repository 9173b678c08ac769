#pragma once

// Experiment cells, plans, run directories and summaries.
//
// A cell names one procedure plus a fully resolved flat config. A plan is a
// list of cells and a seed list; each (cell, seed) pair gets its own run
// directory holding config.kv, record.jsonl, timings.jsonl, model.ckpt and
// eval.json. A run directory whose stored config matches is skipped on
// re-run.

#include "ski/checkpoint.hpp"
#include "ski/kvconfig.hpp"
#include "ski/lvlm.hpp"
#include "ski/synthdata.hpp"
#include "ski/training.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace ski {

enum class Procedure { kVideoclip, kSkeletonclip, kScd, kTrimodal, kCrossproj, kFusion, kLvlm };
Procedure parse_procedure(const std::string& text);
std::string to_string(Procedure procedure);

struct EvalSpec {
  /// Input-gradient saliency against the limb mask of the first leg class
  /// (video-side procedures only).
  bool saliency = false;
  /// Samples of that class used for the saliency average.
  int saliency_samples = 8;

  static EvalSpec from_kv(const KvConfig& kv);
  KvConfig to_kv() const;
};

/// Everything one run needs, parsed from a resolved config.
struct CellConfig {
  Procedure procedure = Procedure::kScd;
  synth::DatasetConfig data;
  ModelConfig model;
  TrainConfig train;
  lvlm::LvlmConfig lvlm;
  EvalSpec eval;

  /// Reads `procedure`, `data.*`, `model.*`, `train.*`, `loss.*`, `lvlm.*`
  /// and `eval.*`; unknown keys are ignored.
  static CellConfig from_kv(const KvConfig& kv);
  /// Every field written out, so the text alone determines the run.
  KvConfig to_kv() const;
  /// Copy with data.seed, train.seed and lvlm.seed set to `seed`.
  CellConfig with_seed(std::uint64_t seed) const;
};

struct CellSpec {
  std::string name;
  CellConfig config;
};

struct ExperimentPlan {
  std::string name = "plan";
  std::vector<CellSpec> cells;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_root = "runs";
  int workers = 1;

  /// Keys: plan.name, plan.seeds, plan.output, plan.workers, plan.cells
  /// (comma list); shared settings at top level; per-cell overrides under
  /// `cell.<name>.`. Throws ConfigError on duplicate or missing cells.
  static ExperimentPlan from_kv(const KvConfig& kv);
  static ExperimentPlan load(const std::filesystem::path& path);
};

/// Trained artifacts and metrics of one (cell, seed) run.
struct RunOutput {
  RunRecord record;
  Checkpoint checkpoint;
  std::string eval_json;
};

/// Runs one cell for one seed entirely in memory.
RunOutput run_cell(const std::string& cell_name, const CellConfig& config, std::uint64_t seed);

struct PlanOutcome {
  int executed = 0;
  int skipped = 0;
  std::vector<std::filesystem::path> run_dirs;
  std::filesystem::path summary_tsv;
  std::filesystem::path summary_svg;
};

/// Directory of one run: <root>/<cell>/seed-<seed>.
std::filesystem::path run_directory(const std::filesystem::path& root, const std::string& cell,
                                    std::uint64_t seed);

/// Executes every (cell, seed) pair not already complete, up to
/// `plan.workers` at a time, then writes summary.tsv and summary.svg under
/// the output root. A directory holding a different config for the same
/// cell and seed is an error.
PlanOutcome run_plan(const ExperimentPlan& plan, std::ostream* log = nullptr);

/// One row per cell: mean and standard deviation of each metric over seeds.
struct SummaryRow {
  std::string cell;
  std::string procedure;
  int runs = 0;
  std::vector<std::string> metric_names;
  std::vector<double> means;
  std::vector<double> stds;
  /// Harmonic mean of the seen and unseen top-1 means when both exist,
  /// otherwise NaN.
  double harmonic = 0.0;
  std::vector<std::string> sources;

  double mean(const std::string& metric) const;
};

/// Reads each run directory (config.kv and record.jsonl). Rows are ordered
/// by cell name; a corrupt record throws FormatError naming the file.
std::vector<SummaryRow> summarize(const std::vector<std::filesystem::path>& run_dirs);
std::string summary_tsv(const std::vector<SummaryRow>& rows);
/// Bar chart of the unseen top-1 mean per cell with one-std whiskers.
std::string summary_svg(const std::vector<SummaryRow>& rows);
/// Writes summary.tsv and summary.svg into `out_dir`.
void emit_summary(const std::vector<std::filesystem::path>& run_dirs,
                  const std::filesystem::path& out_dir);

struct LinePoint {
  double x = 0.0;
  double y = 0.0;
};
/// Line chart with a log10 x axis. A point at x = 0 is drawn one decade
/// left of the smallest positive x and labelled "0".
std::string line_chart_svg(const std::vector<LinePoint>& points, const std::string& x_label,
                           const std::string& y_label);

struct AlphaSweep {
  std::vector<double> alphas;
  std::vector<SummaryRow> rows;
  std::filesystem::path table;
  std::filesystem::path chart;
};

/// One cell per alpha (named alpha-<value>) derived from `base`; writes
/// alpha_sweep.tsv and alpha_sweep.svg under `output_root`. Throws
/// ConfigError on an empty or negative alpha list.
AlphaSweep sweep_alpha(const CellSpec& base, const std::vector<double>& alphas,
                       const std::vector<std::uint64_t>& seeds,
                       const std::filesystem::path& output_root, int workers = 1,
                       std::ostream* log = nullptr);

/// Mean input-gradient saliency inside and outside the limb mask for the
/// first `samples` samples of `class_id`.
struct SaliencySummary {
  int class_id = -1;
  double inside = 0.0;
  double outside = 0.0;
};
SaliencySummary leg_saliency(const VideoEncoder& video, const TextEncoder& text,
                             const synth::Dataset& dataset, int samples);
/// Lowest class id whose limb is a leg, or -1.
int first_leg_class(const synth::Dataset& dataset);

}  // namespace ski
