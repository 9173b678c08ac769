#pragma once

// Procedural skeleton / video / text triplets with ADL-style difficulty.
//
// Every class is a (motion, limb) pair such as "wave left arm". Unseen classes
// are new combinations of motions and limbs that also occur among the seen
// ones, which is what makes zero-shot transfer through the text space
// possible at all. ADL-like classes share one appearance distribution, so
// only joint kinematics separate them; web-like classes carry a
// class-correlated background color.

#include "ski/core.hpp"
#include "ski/kvconfig.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace ski::synth {

/// Fixed 15-joint topology.
enum Joint : int {
  kHead, kNeck, kPelvis,
  kLeftShoulder, kLeftElbow, kLeftWrist,
  kRightShoulder, kRightElbow, kRightWrist,
  kLeftHip, kLeftKnee, kLeftAnkle,
  kRightHip, kRightKnee, kRightAnkle,
  kJointCount
};
inline constexpr int kNumJoints = kJointCount;

/// Parent of each joint; the pelvis is the root (-1).
const std::array<int, kNumJoints>& joint_parents();

enum class Limb { kLeftArm, kRightArm, kLeftLeg, kRightLeg, kHead, kTorso };
enum class Motion { kRaise, kSwing, kWave, kCircle, kStretch };

std::string limb_words(Limb limb);
std::string motion_word(Motion motion);
/// Joints whose bones belong to the limb (root joint first).
std::vector<int> limb_joints(Limb limb);
bool is_leg(Limb limb);

struct MotionPattern {
  Limb limb = Limb::kLeftArm;
  Motion motion = Motion::kRaise;
  double amplitude = 1.0;  ///< radians, before per-sample jitter
  double frequency = 1.0;  ///< cycles per sequence
};

struct AppearanceDistribution {
  Eigen::Vector3d background_mean{0.35, 0.35, 0.35};
  double background_jitter = 0.04;
  double pixel_noise = 0.08;
  Eigen::Vector3d limb_color{0.92, 0.88, 0.80};
};

/// One sample's concrete appearance.
struct Appearance {
  Eigen::Vector3d background{0.35, 0.35, 0.35};
  double pixel_noise = 0.0;
  Eigen::Vector3d limb_color{1.0, 1.0, 1.0};
  std::uint64_t noise_seed = 0;
};

struct ActionSpec {
  int class_id = 0;
  std::string label;
  MotionPattern motion;
  AppearanceDistribution appearance;
  bool adl_like = true;
};

/// Viewpoint. Camera coordinates = R_x(elevation) * R_y(azimuth) * body.
struct Camera {
  double azimuth = 0.0;
  double elevation = 0.0;
  Eigen::Matrix3d rotation() const;
};

struct DatasetConfig {
  int num_classes = 10;
  int samples_per_class = 24;
  int skeleton_frames = 16;
  int video_frames = 8;
  int joints = kNumJoints;
  int height = 32;
  int width = 32;
  int channels = 3;
  double adl_fraction = 1.0;
  double viewpoint_spread = 1.0471975511965976;  // pi / 3
  double motion_subtlety = 1.0;
  double joint_noise = 0.015;
  /// Amplitude of per-pixel sensor noise in rendered frames.
  double pixel_noise = 0.08;
  double seen_ratio = 0.8;
  /// Self-test bounds: ADL class mean frames differ by less than this...
  double epsilon_appearance = 0.05;
  /// ...while class mean joint-speed profiles differ by more than this.
  double epsilon_motion = 0.002;
  std::uint64_t seed = 7;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Reads plain keys (`num_classes`) or `data.`-prefixed ones.
  static DatasetConfig from_kv(const KvConfig& kv);
  KvConfig to_kv() const;
};

struct SplitSpec {
  std::vector<int> seen;
  std::vector<int> unseen;

  bool is_seen(int class_id) const;
  bool is_unseen(int class_id) const;
  const std::vector<int>& side(bool unseen_side) const { return unseen_side ? unseen : seen; }
  /// Throws unless disjoint, both non-empty and covering exactly `all_ids`.
  void validate(const std::vector<int>& all_ids) const;
};

struct Triplet {
  VideoClip video;
  SkeletonSequence skeleton;  ///< camera coordinates
  TextPrompt prompt;
  std::string caption;
  Camera camera;
  Appearance appearance;
  double amplitude_factor = 1.0;
  int sample_index = 0;

  int class_id() const { return prompt.class_id; }
};

struct Dataset {
  DatasetConfig config;
  std::vector<ActionSpec> actions;
  std::vector<Triplet> triplets;
  SplitSpec split;

  const ActionSpec& action(int class_id) const;
  /// The class prompt used for zero-shot scoring of `class_id`.
  TextPrompt class_prompt(int class_id) const;
  std::vector<TextPrompt> class_prompts(const std::vector<int>& class_ids) const;
  std::vector<const Triplet*> samples_of(const std::vector<int>& class_ids) const;
};

struct RenderSettings {
  int frames = 8;
  int height = 32;
  int width = 32;
  int channels = 3;
};

/// Pixels per meter of the orthographic projection for a frame height.
double pixels_per_meter(int height);

/// Rotates every joint by the camera, projects orthographically (x right,
/// y up, origin at the frame center) and draws bones as 1-pixel segments
/// over a noisy background. Values are quantized to multiples of 1/255.
/// Video frame k shows skeleton frame floor(k * T_s / frames).
VideoClip render_skeleton_to_frames(const SkeletonSequence& skeleton, const Camera& camera,
                                    const Appearance& appearance, const RenderSettings& settings);

/// frames x (height*width) 0/1 mask of pixels covered by the given joints'
/// bones (the bone from each listed joint to its parent, excluding the
/// root joint's own parent bone).
Mat render_limb_mask(const SkeletonSequence& skeleton, const Camera& camera,
                     const std::vector<int>& joints, const RenderSettings& settings);

SplitSpec make_splits(const std::vector<int>& class_ids, double seen_ratio, std::uint64_t seed);

/// Grammar sentence: "the person moves the <limb> to <motion> <adverb>".
std::string make_caption(const ActionSpec& spec, double amplitude_factor);
std::string amplitude_adverb(double amplitude_factor);

/// The prompt text for a class label: "a person doing <label>".
std::string class_prompt_text(const std::string& label);

/// Class catalogue in generation order; num_classes takes a prefix.
std::vector<ActionSpec> make_action_specs(const DatasetConfig& config);
int max_classes();

Dataset generate_dataset(const DatasetConfig& config);

struct AdlStatistics {
  double appearance_gap = 0.0;  ///< max pairwise mean |frame_a - frame_b|
  double motion_gap = 0.0;      ///< min pairwise L2 gap of joint-speed profiles
};
AdlStatistics adl_statistics(const Dataset& dataset);
/// Throws Error when the ADL statistics miss the configured bounds.
void self_test(const Dataset& dataset);

// Container file (see docs/formats.md) and split file.
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_dataset(const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);
Dataset deserialize_dataset(std::vector<std::uint8_t> bytes, const std::string& source);
void write_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec read_split(const std::filesystem::path& path);

/// Shared word list for prompts, captions and LVLM templates.
class Vocabulary {
 public:
  static const Vocabulary& instance();

  int size() const { return static_cast<int>(words_.size()); }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  bool contains(const std::string& word) const { return index_.contains(word); }
  int id(const std::string& word) const;
  int eos() const { return id("<eos>"); }

  /// Lowercase + whitespace split; throws ContractViolation naming any
  /// out-of-vocabulary token.
  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& ids) const;

 private:
  Vocabulary();
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace ski::synth
