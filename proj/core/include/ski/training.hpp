#pragma once

#include "ski/encoders.hpp"
#include "ski/kvconfig.hpp"
#include "ski/losses.hpp"
#include "ski/params.hpp"
#include "ski/synthdata.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace ski {

enum class Schedule { kConstant, kCosine };

/// Learning-rate multiplier at progress in [0, 1]; cosine gives
/// 0.5 * (1 + cos(pi * progress)).
double schedule_factor(Schedule schedule, double progress);

struct ModelConfig {
  EncoderConfig video;
  EncoderConfig skeleton;
  TextEncoderConfig text;

  static ModelConfig from_kv(const KvConfig& kv);
  KvConfig to_kv() const;
};

struct TrainConfig {
  int epochs_pretrain = 30;
  int epochs_align = 20;
  int epochs_finetune = 20;
  int epochs_scd = 10;
  /// Tri-modal and cross-projection alignment.
  int epochs_baseline = 20;
  int batch_size = 16;
  double lr_pretrain = 0.05;
  double lr_align = 0.05;
  double lr_finetune = 0.01;
  double lr_scd = 0.01;
  double lr_baseline = 0.05;
  Schedule schedule = Schedule::kCosine;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  LossConfig loss;
  bool freeze_skeleton_text = true;
  bool freeze_video_text = false;
  /// Pretraining-strategy matrix: run SkeletonCLIP pretraining+alignment
  /// and VideoCLIP fine-tuning before SCD.
  bool pretrain_skeletonclip = true;
  bool pretrain_videoclip = true;

  void validate() const;
  /// Reads `train.`-prefixed or plain keys; loss settings under `loss.`.
  static TrainConfig from_kv(const KvConfig& kv);
  KvConfig to_kv() const;
};

/// Momentum SGD over one ParameterSet. Frozen arrays are never touched.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.9) : momentum_(momentum) {}

  /// v = momentum * v + g; w -= lr * v. Throws DimensionMismatch on shape
  /// disagreement and ContractViolation naming the array on a non-finite
  /// gradient.
  void step(ParameterSet& params, const std::vector<Mat>& grads, double lr);

 private:
  double momentum_;
  std::vector<Mat> velocity_;
};

/// One epoch line of a RunRecord.
struct EpochRecord {
  std::string phase;
  int epoch = 0;
  std::vector<std::pair<std::string, double>> fields;

  double field(const std::string& name) const;
};

/// Append-only training log. Serializes to line-delimited JSON: a header
/// line, one line per epoch, then one metrics line. Wall-clock timings are
/// kept apart (timings_jsonl) so the record itself is bit-reproducible.
class RunRecord {
 public:
  RunRecord() = default;
  RunRecord(std::string procedure, std::string fingerprint, std::uint64_t seed);

  void add_epoch(const std::string& phase, int epoch,
                 std::vector<std::pair<std::string, double>> fields);
  void add_metric(const std::string& name, double value);
  void add_timing(const std::string& phase, double seconds);

  const std::string& procedure() const { return procedure_; }
  const std::string& fingerprint() const { return fingerprint_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<EpochRecord>& epochs() const { return epochs_; }
  const std::vector<std::pair<std::string, double>>& metrics() const { return metrics_; }
  /// Throws ContractViolation for an unknown metric.
  double metric(const std::string& name) const;
  bool has_metric(const std::string& name) const;
  std::vector<EpochRecord> phase(const std::string& name) const;

  std::string to_jsonl() const;
  std::string timings_jsonl() const;
  /// Throws FormatError naming `source` on malformed input.
  static RunRecord parse(const std::string& text, const std::string& source);
  void save(const std::filesystem::path& path) const;
  static RunRecord load(const std::filesystem::path& path);

 private:
  std::string procedure_;
  std::string fingerprint_;
  std::uint64_t seed_ = 0;
  std::vector<EpochRecord> epochs_;
  std::vector<std::pair<std::string, double>> metrics_;
  std::vector<std::pair<std::string, double>> timings_;
};

/// Samples a procedure may train on, with their split. Every training
/// entry point re-checks that no sample belongs to an unseen class.
struct TrainingSet {
  std::vector<const synth::Triplet*> samples;
  synth::SplitSpec split;
  /// Seen class ids in ascending order; targets index into this list.
  std::vector<int> class_ids;
  std::vector<TextPrompt> prompts;

  int target(int class_id) const;
  /// Throws ContractViolation when any sample is not of a seen class.
  void check_no_leakage() const;
};

/// Seen-class training set of a dataset.
TrainingSet make_training_set(const synth::Dataset& dataset);

/// Indices into `set.samples` for one epoch. Classes are visited
/// round-robin in a shuffled order so every batch mixes classes; each
/// sample appears exactly once per epoch. Depends only on (seed, epoch).
std::vector<std::vector<int>> class_balanced_batches(const TrainingSet& set, int batch_size,
                                                     std::uint64_t seed, int epoch);

struct VideoClipModel {
  VideoEncoder video;
  TextEncoder text;
};

struct SkeletonClipModel {
  SkeletonEncoder skeleton;
  TextEncoder text;
};

/// Fresh models for a dataset's dimensions. f_t and g_t get identical
/// initial parameters.
VideoClipModel make_videoclip(const ModelConfig& model, const synth::DatasetConfig& data,
                              std::uint64_t seed);
SkeletonClipModel make_skeletonclip(const ModelConfig& model, const synth::DatasetConfig& data,
                                    std::uint64_t seed);
ClassifierHead make_head(const ModelConfig& model, int num_classes, std::uint64_t seed);

void pretrain_skeleton(SkeletonEncoder& encoder, ClassifierHead& head, const TrainingSet& set,
                       const TrainConfig& cfg, RunRecord* record);
void align_skeletonclip(SkeletonClipModel& model, const TrainingSet& set, const TrainConfig& cfg,
                        RunRecord* record);
void finetune_videoclip(VideoClipModel& model, const TrainingSet& set, const TrainConfig& cfg,
                        RunRecord* record, int epochs = -1);
/// The fine-tuned-VideoCLIP baseline's counterpart of the SCD phase: the
/// same epochs, learning rate and batches, cross-entropy only
/// (phase "finetune_extra").
void extend_videoclip(VideoClipModel& model, const TrainingSet& set, const TrainConfig& cfg,
                      RunRecord* record);
/// Joint training of both dual encoders under scd_total. Only the video
/// side is the product; the skeleton side is updated in online modes.
void train_scd(VideoClipModel& videoclip, SkeletonClipModel& skeletonclip, const TrainingSet& set,
               const TrainConfig& cfg, RunRecord* record);

enum class BaselineKind { kTrimodal, kCrossproj };
BaselineKind parse_baseline_kind(const std::string& text);
std::string to_string(BaselineKind kind);

/// Tri-modal: video, skeleton and video-side text encoders trained with
/// pairwise symmetric InfoNCE. Cross-projection: skeleton encoder aligned
/// to the frozen video encoder. Both are scored skeleton-vs-text.
void train_baseline(BaselineKind kind, VideoClipModel& videoclip, SkeletonEncoder& skeleton,
                    const TrainingSet& set, const TrainConfig& cfg, RunRecord* record);

}  // namespace ski
