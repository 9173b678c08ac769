#pragma once

#include "ski/core.hpp"
#include "ski/encoders.hpp"
#include "ski/synthdata.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ski {

/// Anything that places samples and class prompts in one embedding space.
class ZeroShotModel {
 public:
  virtual ~ZeroShotModel() = default;
  /// B x D unit rows.
  virtual Mat embed_samples(std::span<const synth::Triplet* const> samples) const = 0;
  /// C x D unit rows.
  virtual Mat embed_prompts(const std::vector<TextPrompt>& prompts) const = 0;
  virtual std::string fingerprint() const = 0;
};

/// Video encoder scored against its text encoder. This is the whole
/// inference artifact of a distilled model; it holds no skeleton parts.
class VideoTextModel : public ZeroShotModel {
 public:
  VideoTextModel(const VideoEncoder& video, const TextEncoder& text) : video_(video), text_(text) {}
  Mat embed_samples(std::span<const synth::Triplet* const> samples) const override;
  Mat embed_prompts(const std::vector<TextPrompt>& prompts) const override;
  std::string fingerprint() const override;

 private:
  const VideoEncoder& video_;
  const TextEncoder& text_;
};

class SkeletonTextModel : public ZeroShotModel {
 public:
  SkeletonTextModel(const SkeletonEncoder& skeleton, const TextEncoder& text)
      : skeleton_(skeleton), text_(text) {}
  Mat embed_samples(std::span<const synth::Triplet* const> samples) const override;
  Mat embed_prompts(const std::vector<TextPrompt>& prompts) const override;
  std::string fingerprint() const override;

 private:
  const SkeletonEncoder& skeleton_;
  const TextEncoder& text_;
};

/// Index of the largest score; ties go to the lowest class id.
int argmax_class(const Eigen::RowVectorXd& scores, const std::vector<int>& class_ids);

/// Predicted class id for one sample against a prompt set.
int zero_shot_classify(const ZeroShotModel& model, const synth::Triplet& sample,
                       const std::vector<TextPrompt>& prompts);

struct ZeroShotReport {
  std::string side;
  std::string model_fingerprint;
  std::vector<int> seen_ids;
  std::vector<int> unseen_ids;
  /// Classes scored, ascending; rows and columns of `confusion`.
  std::vector<int> class_ids;
  std::vector<int> counts;
  std::vector<int> correct;
  std::vector<double> per_class_accuracy;
  /// confusion(i, j): samples of class_ids[i] predicted as class_ids[j].
  Eigen::MatrixXi confusion;
  int samples = 0;
  double top1 = 0.0;

  std::string to_json() const;
};

enum class SplitSide { kSeen, kUnseen };
SplitSide parse_split_side(const std::string& text);

/// Zero-shot accuracy over one side of the split, scored against that
/// side's class prompts only.
ZeroShotReport evaluate_split(const ZeroShotModel& model, const synth::Dataset& dataset,
                              const synth::SplitSpec& split, SplitSide side);

/// n / sum(1 / v_i). Every value must be positive.
double harmonic_mean(const std::vector<double>& values);

/// Argmax of the elementwise mean of two similarity rows that share
/// column ids.
int fusion_classify(const LogitMatrix& video_row, const LogitMatrix& skeleton_row);
int fusion_classify(const ZeroShotModel& video_side, const ZeroShotModel& skeleton_side,
                    const synth::Triplet& sample, const std::vector<TextPrompt>& prompts);
ZeroShotReport evaluate_fusion(const ZeroShotModel& video_side, const ZeroShotModel& skeleton_side,
                               const synth::Dataset& dataset, const synth::SplitSpec& split,
                               SplitSide side);

/// T_v x (H*W) map: per-pixel L2 norm over channels of the gradient of
/// cos(video embedding, prompt embedding) with respect to the pixels.
Mat saliency_map(const VideoEncoder& video, const TextEncoder& text, const VideoClip& clip,
                 const TextPrompt& prompt);

struct MaskContrast {
  double inside_mean = 0.0;
  double outside_mean = 0.0;
};
MaskContrast mask_contrast(const Mat& saliency, const Mat& mask);

/// Frames side by side, scaled to the map maximum, binary PGM.
void write_saliency_pgm(const Mat& saliency, int height, int width,
                        const std::filesystem::path& path);
/// Raw sidecar: "SKISAL01", u32 frames, u32 height, u32 width, f64 values.
void write_saliency_raw(const Mat& saliency, int height, int width,
                        const std::filesystem::path& path);

struct AlignmentReport {
  std::vector<int> class_ids;
  std::vector<double> mean_cosine;
  double overall = 0.0;
};

/// Per class: mean cosine between the class prompt embedding and the
/// embeddings of that class's samples.
AlignmentReport alignment_report(const ZeroShotModel& model, const synth::Dataset& dataset,
                                 const std::vector<int>& class_ids);

}  // namespace ski
