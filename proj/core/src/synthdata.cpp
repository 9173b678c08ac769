#include "ski/synthdata.hpp"

#include "ski/binary_io.hpp"
#include "ski/error.hpp"
#include "ski/rng.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace ski::synth {

using Eigen::Vector3d;

const std::array<int, kNumJoints>& joint_parents() {
  static const std::array<int, kNumJoints> parents = {
      kNeck,          // head
      kPelvis,        // neck
      -1,             // pelvis
      kNeck,          // left shoulder
      kLeftShoulder,  // left elbow
      kLeftElbow,     // left wrist
      kNeck,          // right shoulder
      kRightShoulder, // right elbow
      kRightElbow,    // right wrist
      kPelvis,        // left hip
      kLeftHip,       // left knee
      kLeftKnee,      // left ankle
      kPelvis,        // right hip
      kRightHip,      // right knee
      kRightKnee,     // right ankle
  };
  return parents;
}

namespace {

// Rest pose in body coordinates: +x is the subject's left, +y up, +z forward.
const std::array<Vector3d, kNumJoints>& rest_pose() {
  static const std::array<Vector3d, kNumJoints> pose = {
      Vector3d(0.00, 0.72, 0.0),   Vector3d(0.00, 0.50, 0.0),   Vector3d(0.00, 0.00, 0.0),
      Vector3d(0.19, 0.46, 0.0),   Vector3d(0.21, 0.18, 0.0),   Vector3d(0.22, -0.08, 0.0),
      Vector3d(-0.19, 0.46, 0.0),  Vector3d(-0.21, 0.18, 0.0),  Vector3d(-0.22, -0.08, 0.0),
      Vector3d(0.10, -0.04, 0.0),  Vector3d(0.11, -0.46, 0.0),  Vector3d(0.11, -0.88, 0.0),
      Vector3d(-0.10, -0.04, 0.0), Vector3d(-0.11, -0.46, 0.0), Vector3d(-0.11, -0.88, 0.0),
  };
  return pose;
}

double limb_side(Limb limb) {
  return (limb == Limb::kRightArm || limb == Limb::kRightLeg) ? -1.0 : 1.0;
}

double limb_scale(Limb limb) {
  switch (limb) {
    case Limb::kLeftArm:
    case Limb::kRightArm: return 1.0;
    case Limb::kLeftLeg:
    case Limb::kRightLeg: return 0.55;
    case Limb::kHead: return 0.5;
    case Limb::kTorso: return 0.35;
  }
  return 1.0;
}

double base_amplitude(Motion motion) {
  switch (motion) {
    case Motion::kRaise: return 1.5;
    case Motion::kSwing: return 0.8;
    case Motion::kWave: return 0.6;
    case Motion::kCircle: return 0.7;
    case Motion::kStretch: return 1.3;
  }
  return 1.0;
}

Eigen::Matrix3d rot_x(double a) { return Eigen::AngleAxisd(a, Vector3d::UnitX()).toRotationMatrix(); }
Eigen::Matrix3d rot_y(double a) { return Eigen::AngleAxisd(a, Vector3d::UnitY()).toRotationMatrix(); }
Eigen::Matrix3d rot_z(double a) { return Eigen::AngleAxisd(a, Vector3d::UnitZ()).toRotationMatrix(); }

/// Limb rotation at normalized time u in [0, 1]: forward (sagittal) angle
/// and outward (frontal) angle.
std::pair<double, double> limb_angles(Motion motion, double side, double amp, double freq,
                                      double phase, double u) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const double ramp = 0.5 * (1.0 - std::cos(std::numbers::pi * u));
  switch (motion) {
    case Motion::kRaise: return {amp * ramp, 0.0};
    case Motion::kSwing: return {amp * std::sin(kTwoPi * freq * u + phase), 0.0};
    case Motion::kWave:
      return {0.0, side * amp * (0.6 + 0.4 * std::sin(kTwoPi * 2.0 * freq * u + phase))};
    case Motion::kCircle:
      return {0.7 * amp * std::sin(kTwoPi * freq * u + phase),
              side * 0.7 * amp * (1.0 + std::cos(kTwoPi * freq * u + phase)) * 0.5};
    case Motion::kStretch: return {0.0, side * amp * ramp};
  }
  return {0.0, 0.0};
}

Eigen::Vector3d hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Vector3d rgb;
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  return rgb.array() + (v - c);
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

/// Deterministic value in [-1, 1] for one background pixel.
double pixel_noise(std::uint64_t seed, std::uint64_t index) {
  return static_cast<double>(mix_seed(seed, index) >> 11) * 0x1.0p-52 - 1.0;
}

struct Projector2d {
  double scale;
  double cx;
  double cy;
  Eigen::Vector2d operator()(const Vector3d& p) const {
    return {cx + p.x() * scale, cy - p.y() * scale};
  }
};

template <typename Fn>
void for_each_segment_pixel(const Eigen::Vector2d& a, const Eigen::Vector2d& b, int width,
                            int height, Fn&& fn) {
  const double len = std::max(std::abs(b.x() - a.x()), std::abs(b.y() - a.y()));
  const int steps = static_cast<int>(std::ceil(len * 2.0)) + 1;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const Eigen::Vector2d p = a + t * (b - a);
    const int px = static_cast<int>(std::floor(p.x()));
    const int py = static_cast<int>(std::floor(p.y()));
    if (px >= 0 && px < width && py >= 0 && py < height) fn(px, py);
  }
}

int source_frame(int k, int video_frames, int skeleton_frames) {
  return std::min(skeleton_frames - 1,
                  static_cast<int>((static_cast<long>(k) * skeleton_frames) / video_frames));
}

}  // namespace

std::string limb_words(Limb limb) {
  switch (limb) {
    case Limb::kLeftArm: return "left arm";
    case Limb::kRightArm: return "right arm";
    case Limb::kLeftLeg: return "left leg";
    case Limb::kRightLeg: return "right leg";
    case Limb::kHead: return "head";
    case Limb::kTorso: return "torso";
  }
  return "";
}

std::string motion_word(Motion motion) {
  switch (motion) {
    case Motion::kRaise: return "raise";
    case Motion::kSwing: return "swing";
    case Motion::kWave: return "wave";
    case Motion::kCircle: return "circle";
    case Motion::kStretch: return "stretch";
  }
  return "";
}

std::vector<int> limb_joints(Limb limb) {
  switch (limb) {
    case Limb::kLeftArm: return {kLeftShoulder, kLeftElbow, kLeftWrist};
    case Limb::kRightArm: return {kRightShoulder, kRightElbow, kRightWrist};
    case Limb::kLeftLeg: return {kLeftHip, kLeftKnee, kLeftAnkle};
    case Limb::kRightLeg: return {kRightHip, kRightKnee, kRightAnkle};
    case Limb::kHead: return {kNeck, kHead};
    case Limb::kTorso:
      return {kPelvis, kNeck, kHead, kLeftShoulder, kLeftElbow, kLeftWrist,
              kRightShoulder, kRightElbow, kRightWrist};
  }
  return {};
}

bool is_leg(Limb limb) { return limb == Limb::kLeftLeg || limb == Limb::kRightLeg; }

Eigen::Matrix3d Camera::rotation() const { return rot_x(elevation) * rot_y(azimuth); }

// ---------------------------------------------------------------------------
// Configuration

void DatasetConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("dataset config field `" + field + "` " + why);
  };
  if (num_classes < 2) fail("num_classes", "must be at least 2");
  if (num_classes > max_classes()) {
    fail("num_classes", "exceeds the " + std::to_string(max_classes()) + "-class catalogue");
  }
  if (samples_per_class < 1) fail("samples_per_class", "must be at least 1");
  if (skeleton_frames < 1) fail("T_s", "must be at least 1");
  if (video_frames < 1) fail("T_v", "must be at least 1");
  if (joints != kNumJoints) fail("J", "must be " + std::to_string(kNumJoints) + " (fixed topology)");
  if (height < 16) fail("H", "must be at least 16");
  if (width < 16) fail("W", "must be at least 16");
  if (channels != 1 && channels != 3) fail("C", "must be 1 or 3");
  if (!(adl_fraction >= 0.0 && adl_fraction <= 1.0)) fail("adl_fraction", "must lie in [0, 1]");
  if (!(viewpoint_spread >= 0.0 && viewpoint_spread <= std::numbers::pi)) {
    fail("viewpoint_spread", "must lie in [0, pi]");
  }
  if (!(motion_subtlety > 0.0 && motion_subtlety <= 1.0)) {
    fail("motion_subtlety", "must lie in (0, 1]");
  }
  if (!(joint_noise >= 0.0)) fail("joint_noise", "must be non-negative");
  if (!(pixel_noise >= 0.0 && pixel_noise <= 1.0)) fail("pixel_noise", "must lie in [0, 1]");
  if (!(seen_ratio > 0.0 && seen_ratio < 1.0)) fail("seen_ratio", "must lie in (0, 1)");
  if (!(epsilon_appearance > 0.0)) fail("epsilon_appearance", "must be positive");
  if (!(epsilon_motion >= 0.0)) fail("epsilon_motion", "must be non-negative");
}

DatasetConfig DatasetConfig::from_kv(const KvConfig& raw) {
  const KvConfig kv = raw.merged(raw.scoped("data"));
  DatasetConfig c;
  c.num_classes = kv.get_int("num_classes", c.num_classes);
  c.samples_per_class = kv.get_int("samples_per_class", c.samples_per_class);
  c.skeleton_frames = kv.get_int("T_s", c.skeleton_frames);
  c.video_frames = kv.get_int("T_v", c.video_frames);
  c.joints = kv.get_int("J", c.joints);
  c.height = kv.get_int("H", c.height);
  c.width = kv.get_int("W", c.width);
  c.channels = kv.get_int("C", c.channels);
  c.adl_fraction = kv.get_double("adl_fraction", c.adl_fraction);
  c.viewpoint_spread = kv.get_double("viewpoint_spread", c.viewpoint_spread);
  c.motion_subtlety = kv.get_double("motion_subtlety", c.motion_subtlety);
  c.pixel_noise = kv.get_double("pixel_noise", c.pixel_noise);
  c.joint_noise = kv.get_double("joint_noise", c.joint_noise);
  c.seen_ratio = kv.get_double("seen_ratio", c.seen_ratio);
  c.epsilon_appearance = kv.get_double("epsilon_appearance", c.epsilon_appearance);
  c.epsilon_motion = kv.get_double("epsilon_motion", c.epsilon_motion);
  c.seed = kv.get_u64("seed", c.seed);
  c.validate();
  return c;
}

KvConfig DatasetConfig::to_kv() const {
  KvConfig kv;
  kv.set("num_classes", std::to_string(num_classes));
  kv.set("samples_per_class", std::to_string(samples_per_class));
  kv.set("T_s", std::to_string(skeleton_frames));
  kv.set("T_v", std::to_string(video_frames));
  kv.set("J", std::to_string(joints));
  kv.set("H", std::to_string(height));
  kv.set("W", std::to_string(width));
  kv.set("C", std::to_string(channels));
  kv.set("adl_fraction", format_double(adl_fraction));
  kv.set("viewpoint_spread", format_double(viewpoint_spread));
  kv.set("motion_subtlety", format_double(motion_subtlety));
  kv.set("pixel_noise", format_double(pixel_noise));
  kv.set("joint_noise", format_double(joint_noise));
  kv.set("seen_ratio", format_double(seen_ratio));
  kv.set("epsilon_appearance", format_double(epsilon_appearance));
  kv.set("epsilon_motion", format_double(epsilon_motion));
  kv.set("seed", std::to_string(seed));
  return kv;
}

// ---------------------------------------------------------------------------
// Splits

bool SplitSpec::is_seen(int class_id) const {
  return std::find(seen.begin(), seen.end(), class_id) != seen.end();
}

bool SplitSpec::is_unseen(int class_id) const {
  return std::find(unseen.begin(), unseen.end(), class_id) != unseen.end();
}

void SplitSpec::validate(const std::vector<int>& all_ids) const {
  if (seen.empty() || unseen.empty()) throw ContractViolation("split: both sides must be non-empty");
  std::set<int> s(seen.begin(), seen.end());
  for (int id : unseen) {
    if (s.contains(id)) throw ContractViolation("split: class " + std::to_string(id) + " on both sides");
    s.insert(id);
  }
  if (s != std::set<int>(all_ids.begin(), all_ids.end())) {
    throw ContractViolation("split: sides do not cover the dataset's classes");
  }
}

SplitSpec make_splits(const std::vector<int>& class_ids, double seen_ratio, std::uint64_t seed) {
  if (class_ids.size() < 2) throw ContractViolation("make_splits: need at least two classes");
  if (!(seen_ratio > 0.0 && seen_ratio < 1.0)) {
    throw ContractViolation("make_splits: seen_ratio must lie in (0, 1)");
  }
  const auto n = static_cast<long>(class_ids.size());
  const long n_seen = std::clamp(std::lround(seen_ratio * static_cast<double>(n)), 1L, n - 1);
  std::vector<int> ids = class_ids;
  std::sort(ids.begin(), ids.end());
  Rng rng(mix_seed(seed, 0x5B1D));
  rng.shuffle(std::span<int>(ids));
  SplitSpec split;
  split.seen.assign(ids.begin(), ids.begin() + n_seen);
  split.unseen.assign(ids.begin() + n_seen, ids.end());
  std::sort(split.seen.begin(), split.seen.end());
  std::sort(split.unseen.begin(), split.unseen.end());
  return split;
}

// ---------------------------------------------------------------------------
// Grammar

std::string amplitude_adverb(double amplitude_factor) {
  if (amplitude_factor < 0.8667) return "slightly";
  if (amplitude_factor < 1.1333) return "steadily";
  return "widely";
}

std::string make_caption(const ActionSpec& spec, double amplitude_factor) {
  return "the person moves the " + limb_words(spec.motion.limb) + " to " +
         motion_word(spec.motion.motion) + " " + amplitude_adverb(amplitude_factor);
}

std::string class_prompt_text(const std::string& label) { return "a person doing " + label; }

Vocabulary::Vocabulary() {
  words_ = {"<eos>", "user:", "assistant:",
            // queries
            "what", "is", "the", "person", "doing", "?", "describe", "motion", ".",
            // prompt template
            "a",
            // caption grammar
            "moves", "to", "slightly", "steadily", "widely",
            // limbs and motions
            "left", "right", "arm", "leg", "head", "torso",
            "raise", "swing", "wave", "circle", "stretch"};
  for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i);
}

const Vocabulary& Vocabulary::instance() {
  static const Vocabulary vocab;
  return vocab;
}

int Vocabulary::id(const std::string& word) const {
  const auto it = index_.find(word);
  if (it == index_.end()) throw ContractViolation("out-of-vocabulary token `" + word + "`");
  return it->second;
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int> ids;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    std::transform(tok.begin(), tok.end(), tok.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    ids.push_back(id(tok));
  }
  return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (!out.empty()) out += ' ';
    out += word(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Catalogue and generation

namespace {

std::vector<std::pair<Motion, Limb>> catalogue() {
  using M = Motion;
  using L = Limb;
  std::vector<std::pair<Motion, Limb>> c = {
      {M::kRaise, L::kLeftArm},  {M::kSwing, L::kRightArm}, {M::kWave, L::kLeftLeg},
      {M::kSwing, L::kLeftLeg},  {M::kWave, L::kRightArm},  {M::kRaise, L::kRightLeg},
      {M::kSwing, L::kLeftArm},  {M::kRaise, L::kRightArm}, {M::kWave, L::kLeftArm},
      {M::kSwing, L::kRightLeg}, {M::kRaise, L::kLeftLeg},  {M::kWave, L::kRightLeg},
  };
  for (M m : {M::kCircle, M::kStretch}) {
    for (L l : {L::kLeftArm, L::kRightArm, L::kLeftLeg, L::kRightLeg}) c.emplace_back(m, l);
  }
  for (L l : {L::kHead, L::kTorso}) {
    for (M m : {M::kRaise, M::kSwing, M::kWave, M::kCircle, M::kStretch}) c.emplace_back(m, l);
  }
  return c;
}

}  // namespace

int max_classes() { return static_cast<int>(catalogue().size()); }

std::vector<ActionSpec> make_action_specs(const DatasetConfig& config) {
  const auto cat = catalogue();
  const int n_adl =
      static_cast<int>(std::lround(config.adl_fraction * static_cast<double>(config.num_classes)));
  std::vector<ActionSpec> specs;
  for (int c = 0; c < config.num_classes; ++c) {
    ActionSpec s;
    s.class_id = c;
    s.motion.motion = cat[static_cast<std::size_t>(c)].first;
    s.motion.limb = cat[static_cast<std::size_t>(c)].second;
    s.label = motion_word(s.motion.motion) + " " + limb_words(s.motion.limb);
    s.motion.amplitude =
        base_amplitude(s.motion.motion) * limb_scale(s.motion.limb) * config.motion_subtlety;
    s.motion.frequency = 1.0;
    s.adl_like = c < n_adl;
    s.appearance.pixel_noise = config.pixel_noise;
    if (!s.adl_like) {
      s.appearance.background_mean =
          hsv_to_rgb(static_cast<double>(c) / config.num_classes, 0.7, 0.6);
    }
    specs.push_back(std::move(s));
  }
  return specs;
}

double pixels_per_meter(int height) { return static_cast<double>(height) / 2.2; }

VideoClip render_skeleton_to_frames(const SkeletonSequence& skeleton, const Camera& camera,
                                    const Appearance& appearance, const RenderSettings& settings) {
  skeleton.validate();
  if (settings.height < 16 || settings.width < 16) {
    throw ContractViolation("render: frames must be at least 16x16");
  }
  const int H = settings.height;
  const int W = settings.width;
  const int C = settings.channels;
  const Eigen::Matrix3d R = camera.rotation();
  const Projector2d project{pixels_per_meter(H), W / 2.0, H / 2.0};
  const bool full_topology = skeleton.joints == kNumJoints;
  const auto& parents = joint_parents();

  VideoClip clip;
  clip.channels = C;
  clip.height = H;
  clip.width = W;
  clip.class_id = skeleton.class_id;
  clip.frames.resize(settings.frames, C * H * W);

  std::vector<Eigen::Vector2d> pts(static_cast<std::size_t>(skeleton.joints));
  std::vector<char> covered(static_cast<std::size_t>(H * W));
  for (int k = 0; k < settings.frames; ++k) {
    const int t = source_frame(k, settings.frames, skeleton.length());
    bool any_inside = false;
    for (int j = 0; j < skeleton.joints; ++j) {
      pts[static_cast<std::size_t>(j)] = project(R * skeleton.joint(t, j));
      const auto& p = pts[static_cast<std::size_t>(j)];
      any_inside = any_inside || (p.x() >= 0 && p.x() < W && p.y() >= 0 && p.y() < H);
    }
    if (!any_inside) {
      throw ContractViolation("render: every joint of frame " + std::to_string(k) +
                              " projects outside the image");
    }
    std::fill(covered.begin(), covered.end(), 0);
    auto mark = [&](int x, int y) { covered[static_cast<std::size_t>(y * W + x)] = 1; };
    for (int j = 0; j < skeleton.joints; ++j) {
      const auto& p = pts[static_cast<std::size_t>(j)];
      for_each_segment_pixel(p, p, W, H, mark);
      if (full_topology && parents[static_cast<std::size_t>(j)] >= 0) {
        for_each_segment_pixel(p, pts[static_cast<std::size_t>(parents[static_cast<std::size_t>(j)])],
                               W, H, mark);
      }
    }
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const bool limb = covered[static_cast<std::size_t>(y * W + x)] != 0;
        const double n =
            pixel_noise(appearance.noise_seed, static_cast<std::uint64_t>((k * H + y) * W + x));
        const Vector3d rgb = limb ? appearance.limb_color
                                  : Vector3d(appearance.background.array() + appearance.pixel_noise * n);
        if (C == 1) {
          clip.frames(k, y * W + x) = quantize(rgb.mean());
        } else {
          for (int c = 0; c < 3; ++c) clip.frames(k, (c * H + y) * W + x) = quantize(rgb(c));
        }
      }
    }
  }
  return clip;
}

Mat render_limb_mask(const SkeletonSequence& skeleton, const Camera& camera,
                     const std::vector<int>& joints, const RenderSettings& settings) {
  const int H = settings.height;
  const int W = settings.width;
  const Eigen::Matrix3d R = camera.rotation();
  const Projector2d project{pixels_per_meter(H), W / 2.0, H / 2.0};
  const auto& parents = joint_parents();
  Mat mask = Mat::Zero(settings.frames, H * W);
  for (int k = 0; k < settings.frames; ++k) {
    const int t = source_frame(k, settings.frames, skeleton.length());
    // The first listed joint is the limb root; bones run from each other
    // listed joint to its parent.
    for (std::size_t i = 1; i < joints.size(); ++i) {
      const int j = joints[i];
      const int p = parents[static_cast<std::size_t>(j)];
      if (p < 0) continue;
      for_each_segment_pixel(project(R * skeleton.joint(t, j)), project(R * skeleton.joint(t, p)),
                             W, H, [&](int x, int y) { mask(k, y * W + x) = 1.0; });
    }
  }
  return mask;
}

namespace {

Triplet generate_sample(const DatasetConfig& cfg, const ActionSpec& spec, int sample_index) {
  Rng rng(mix_seed(cfg.seed,
                   static_cast<std::uint64_t>(spec.class_id) * 100003ULL +
                       static_cast<std::uint64_t>(sample_index)));
  Triplet tr;
  tr.sample_index = sample_index;
  tr.amplitude_factor = rng.uniform(0.6, 1.4);
  const double amp = spec.motion.amplitude * tr.amplitude_factor;
  const double freq = spec.motion.frequency * rng.uniform(0.8, 1.2);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const int subject = static_cast<int>(rng.index(8));
  const double body_scale = 0.9 + 0.025 * subject;
  tr.camera.azimuth = rng.uniform(-0.5, 0.5) * cfg.viewpoint_spread;
  tr.camera.elevation = rng.uniform(-1.0, 1.0) * cfg.viewpoint_spread / 6.0;

  const Limb limb = spec.motion.limb;
  const double side = limb_side(limb);
  const std::vector<int> chain = limb_joints(limb);
  const Eigen::Matrix3d R = tr.camera.rotation();

  SkeletonSequence& sk = tr.skeleton;
  sk.joints = kNumJoints;
  sk.class_id = spec.class_id;
  sk.subject_id = subject;
  sk.frames.resize(cfg.skeleton_frames, 3 * kNumJoints);
  const auto& rest = rest_pose();
  for (int t = 0; t < cfg.skeleton_frames; ++t) {
    const double u = cfg.skeleton_frames > 1 ? static_cast<double>(t) / (cfg.skeleton_frames - 1) : 0.0;
    std::array<Vector3d, kNumJoints> pose;
    for (int j = 0; j < kNumJoints; ++j) pose[static_cast<std::size_t>(j)] = rest[static_cast<std::size_t>(j)] * body_scale;
    const auto [forward, outward] = limb_angles(spec.motion.motion, side, amp, freq, phase, u);
    const Eigen::Matrix3d L = rot_z(outward) * rot_x(-forward);
    const Vector3d root = pose[static_cast<std::size_t>(chain.front())];
    for (std::size_t i = 1; i < chain.size(); ++i) {
      auto& p = pose[static_cast<std::size_t>(chain[i])];
      p = root + L * (p - root);
    }
    for (int j = 0; j < kNumJoints; ++j) {
      Vector3d p = pose[static_cast<std::size_t>(j)];
      p += cfg.joint_noise * Vector3d(rng.normal(), rng.normal(), rng.normal());
      sk.frames.row(t).segment<3>(3 * j) = (R * p).transpose();
    }
  }

  const AppearanceDistribution& dist = spec.appearance;
  for (int c = 0; c < 3; ++c) {
    tr.appearance.background(c) = std::clamp(
        dist.background_mean(c) + dist.background_jitter * rng.uniform(-1.0, 1.0), 0.0, 1.0);
  }
  tr.appearance.pixel_noise = dist.pixel_noise;
  tr.appearance.limb_color = dist.limb_color;
  tr.appearance.noise_seed = rng.next();

  const RenderSettings rs{cfg.video_frames, cfg.height, cfg.width, cfg.channels};
  tr.video = render_skeleton_to_frames(sk, Camera{}, tr.appearance, rs);
  tr.video.class_id = spec.class_id;
  tr.prompt = TextPrompt{class_prompt_text(spec.label), spec.class_id, "a_person_doing"};
  tr.caption = make_caption(spec, tr.amplitude_factor);
  return tr;
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.actions = make_action_specs(config);
  ds.triplets.reserve(static_cast<std::size_t>(config.num_classes * config.samples_per_class));
  for (const ActionSpec& spec : ds.actions) {
    for (int s = 0; s < config.samples_per_class; ++s) {
      ds.triplets.push_back(generate_sample(config, spec, s));
    }
  }
  std::vector<int> ids;
  for (const auto& a : ds.actions) ids.push_back(a.class_id);
  ds.split = make_splits(ids, config.seen_ratio, config.seed);
  return ds;
}

const ActionSpec& Dataset::action(int class_id) const {
  for (const auto& a : actions) {
    if (a.class_id == class_id) return a;
  }
  throw ContractViolation("dataset has no class " + std::to_string(class_id));
}

TextPrompt Dataset::class_prompt(int class_id) const {
  return TextPrompt{class_prompt_text(action(class_id).label), class_id, "a_person_doing"};
}

std::vector<TextPrompt> Dataset::class_prompts(const std::vector<int>& class_ids) const {
  std::vector<TextPrompt> out;
  for (int id : class_ids) out.push_back(class_prompt(id));
  return out;
}

std::vector<const Triplet*> Dataset::samples_of(const std::vector<int>& class_ids) const {
  std::vector<const Triplet*> out;
  for (const auto& t : triplets) {
    if (std::find(class_ids.begin(), class_ids.end(), t.class_id()) != class_ids.end()) {
      out.push_back(&t);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// ADL statistics

AdlStatistics adl_statistics(const Dataset& ds) {
  struct ClassStats {
    Mat mean_frames;
    Vec speed;
    int count = 0;
  };
  std::vector<ClassStats> stats;
  std::vector<int> ids;
  for (const auto& a : ds.actions) {
    if (!a.adl_like) continue;
    ids.push_back(a.class_id);
    stats.push_back({});
  }
  for (const auto& t : ds.triplets) {
    const auto it = std::find(ids.begin(), ids.end(), t.class_id());
    if (it == ids.end()) continue;
    ClassStats& s = stats[static_cast<std::size_t>(it - ids.begin())];
    Vec speed = Vec::Zero(t.skeleton.joints);
    for (int f = 1; f < t.skeleton.length(); ++f) {
      for (int j = 0; j < t.skeleton.joints; ++j) {
        speed(j) += (t.skeleton.joint(f, j) - t.skeleton.joint(f - 1, j)).norm();
      }
    }
    if (t.skeleton.length() > 1) speed /= static_cast<double>(t.skeleton.length() - 1);
    if (s.count == 0) {
      s.mean_frames = t.video.frames;
      s.speed = speed;
    } else {
      s.mean_frames += t.video.frames;
      s.speed += speed;
    }
    ++s.count;
  }
  AdlStatistics out;
  out.motion_gap = std::numeric_limits<double>::infinity();
  for (auto& s : stats) {
    s.mean_frames /= s.count;
    s.speed /= s.count;
  }
  for (std::size_t a = 0; a < stats.size(); ++a) {
    for (std::size_t b = a + 1; b < stats.size(); ++b) {
      const double app = (stats[a].mean_frames - stats[b].mean_frames).cwiseAbs().mean();
      out.appearance_gap = std::max(out.appearance_gap, app);
      out.motion_gap = std::min(out.motion_gap, (stats[a].speed - stats[b].speed).norm());
    }
  }
  if (stats.size() < 2) out.motion_gap = 0.0;
  return out;
}

void self_test(const Dataset& ds) {
  const AdlStatistics s = adl_statistics(ds);
  int adl = 0;
  for (const auto& a : ds.actions) adl += a.adl_like ? 1 : 0;
  if (adl < 2) return;
  if (!(s.appearance_gap < ds.config.epsilon_appearance)) {
    throw Error("self-test: ADL appearance gap " + format_double(s.appearance_gap) +
                " is not below epsilon_appearance " + format_double(ds.config.epsilon_appearance));
  }
  if (!(s.motion_gap > ds.config.epsilon_motion)) {
    throw Error("self-test: ADL motion gap " + format_double(s.motion_gap) +
                " is not above epsilon_motion " + format_double(ds.config.epsilon_motion));
  }
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr std::string_view kDataMagic = "SKIDATA1";
constexpr std::uint32_t kDataVersion = 1;

void write_vec3(ByteWriter& w, const Vector3d& v) {
  for (int i = 0; i < 3; ++i) w.f64(v(i));
}

Vector3d read_vec3(ByteReader& r) {
  Vector3d v;
  for (int i = 0; i < 3; ++i) v(i) = r.f64();
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  const DatasetConfig& c = ds.config;
  ByteWriter w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kDataMagic.data()), kDataMagic.size()));
  w.u32(kDataVersion);
  w.u32(static_cast<std::uint32_t>(ds.triplets.size()));
  w.u32(static_cast<std::uint32_t>(ds.actions.size()));
  w.u32(static_cast<std::uint32_t>(c.skeleton_frames));
  w.u32(static_cast<std::uint32_t>(c.joints));
  w.u32(static_cast<std::uint32_t>(c.video_frames));
  w.u32(static_cast<std::uint32_t>(c.channels));
  w.u32(static_cast<std::uint32_t>(c.height));
  w.u32(static_cast<std::uint32_t>(c.width));
  w.str(c.to_kv().canonical());

  for (const ActionSpec& a : ds.actions) {
    w.u32(static_cast<std::uint32_t>(a.class_id));
    w.str(a.label);
    w.u8(a.adl_like ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(a.motion.limb));
    w.u8(static_cast<std::uint8_t>(a.motion.motion));
    w.f64(a.motion.amplitude);
    w.f64(a.motion.frequency);
    write_vec3(w, a.appearance.background_mean);
    w.f64(a.appearance.background_jitter);
    w.f64(a.appearance.pixel_noise);
    write_vec3(w, a.appearance.limb_color);
  }
  w.u32(static_cast<std::uint32_t>(ds.split.seen.size()));
  for (int id : ds.split.seen) w.u32(static_cast<std::uint32_t>(id));
  w.u32(static_cast<std::uint32_t>(ds.split.unseen.size()));
  for (int id : ds.split.unseen) w.u32(static_cast<std::uint32_t>(id));

  for (const Triplet& t : ds.triplets) {
    w.u32(static_cast<std::uint32_t>(t.class_id()));
    w.u32(static_cast<std::uint32_t>(t.skeleton.subject_id));
    w.u32(static_cast<std::uint32_t>(t.sample_index));
    w.f64(t.camera.azimuth);
    w.f64(t.camera.elevation);
    w.f64(t.amplitude_factor);
    write_vec3(w, t.appearance.background);
    w.f64(t.appearance.pixel_noise);
    write_vec3(w, t.appearance.limb_color);
    w.u64(t.appearance.noise_seed);
    for (Eigen::Index i = 0; i < t.skeleton.frames.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.skeleton.frames.cols(); ++j) w.f64(t.skeleton.frames(i, j));
    }
    for (Eigen::Index i = 0; i < t.video.frames.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.video.frames.cols(); ++j) {
        w.u8(static_cast<std::uint8_t>(std::lround(t.video.frames(i, j) * 255.0)));
      }
    }
    w.str(t.prompt.text);
    w.str(t.prompt.template_id);
    w.str(t.caption);
  }
  return w.bytes();
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(serialize_dataset(ds));
  w.save(path);
}

Dataset deserialize_dataset(std::vector<std::uint8_t> bytes, const std::string& source) {
  ByteReader r(std::move(bytes), source);
  r.expect_magic(kDataMagic);
  const std::uint32_t version = r.u32();
  if (version != kDataVersion) {
    throw FormatError(source + ": unsupported dataset version " + std::to_string(version));
  }
  const std::uint32_t n_triplets = r.u32();
  const std::uint32_t n_classes = r.u32();
  const int T_s = static_cast<int>(r.u32());
  const int J = static_cast<int>(r.u32());
  const int T_v = static_cast<int>(r.u32());
  const int C = static_cast<int>(r.u32());
  const int H = static_cast<int>(r.u32());
  const int W = static_cast<int>(r.u32());

  Dataset ds;
  ds.config = DatasetConfig::from_kv(KvConfig::parse(r.str(), source));
  if (ds.config.skeleton_frames != T_s || ds.config.joints != J || ds.config.video_frames != T_v ||
      ds.config.channels != C || ds.config.height != H || ds.config.width != W) {
    throw FormatError(source + ": header dimensions disagree with embedded config");
  }
  for (std::uint32_t i = 0; i < n_classes; ++i) {
    ActionSpec a;
    a.class_id = static_cast<int>(r.u32());
    a.label = r.str();
    a.adl_like = r.u8() != 0;
    a.motion.limb = static_cast<Limb>(r.u8());
    a.motion.motion = static_cast<Motion>(r.u8());
    a.motion.amplitude = r.f64();
    a.motion.frequency = r.f64();
    a.appearance.background_mean = read_vec3(r);
    a.appearance.background_jitter = r.f64();
    a.appearance.pixel_noise = r.f64();
    a.appearance.limb_color = read_vec3(r);
    ds.actions.push_back(std::move(a));
  }
  for (auto* side : {&ds.split.seen, &ds.split.unseen}) {
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) side->push_back(static_cast<int>(r.u32()));
  }
  ds.triplets.reserve(n_triplets);
  for (std::uint32_t i = 0; i < n_triplets; ++i) {
    Triplet t;
    const int class_id = static_cast<int>(r.u32());
    t.skeleton.subject_id = static_cast<int>(r.u32());
    t.sample_index = static_cast<int>(r.u32());
    t.camera.azimuth = r.f64();
    t.camera.elevation = r.f64();
    t.amplitude_factor = r.f64();
    t.appearance.background = read_vec3(r);
    t.appearance.pixel_noise = r.f64();
    t.appearance.limb_color = read_vec3(r);
    t.appearance.noise_seed = r.u64();
    t.skeleton.joints = J;
    t.skeleton.class_id = class_id;
    t.skeleton.frames.resize(T_s, 3 * J);
    for (int a = 0; a < T_s; ++a) {
      for (int b = 0; b < 3 * J; ++b) t.skeleton.frames(a, b) = r.f64();
    }
    t.video.channels = C;
    t.video.height = H;
    t.video.width = W;
    t.video.class_id = class_id;
    t.video.frames.resize(T_v, C * H * W);
    const auto px = r.raw(static_cast<std::size_t>(T_v) * C * H * W);
    std::size_t k = 0;
    for (int a = 0; a < T_v; ++a) {
      for (int b = 0; b < C * H * W; ++b) t.video.frames(a, b) = px[k++] / 255.0;
    }
    t.prompt.text = r.str();
    t.prompt.template_id = r.str();
    t.prompt.class_id = class_id;
    t.caption = r.str();
    ds.triplets.push_back(std::move(t));
  }
  if (!r.at_end()) throw FormatError(source + ": trailing bytes after last record");
  return ds;
}

Dataset read_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(read_file_bytes(path), path.string());
}

void write_split(const SplitSpec& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "seen\n";
  for (int id : split.seen) out << id << '\n';
  out << "unseen\n";
  for (int id : split.unseen) out << id << '\n';
}

SplitSpec read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  SplitSpec split;
  std::vector<int>* side = nullptr;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line == "seen") {
      side = &split.seen;
    } else if (line == "unseen") {
      side = &split.unseen;
    } else {
      if (side == nullptr) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) +
                          ": class id before a section header");
      }
      try {
        std::size_t used = 0;
        const int id = std::stoi(line, &used);
        if (used != line.size()) throw std::invalid_argument(line);
        side->push_back(id);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad class id `" +
                          line + "`");
      }
    }
  }
  return split;
}

}  // namespace ski::synth
