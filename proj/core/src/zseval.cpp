#include "ski/zseval.hpp"

#include "ski/binary_io.hpp"
#include "ski/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ski {
namespace {

std::string combined_fingerprint(std::uint64_t a, std::uint64_t b) {
  ByteWriter w;
  w.u64(a);
  w.u64(b);
  return hex64(fnv1a64(w.bytes()));
}

std::vector<int> class_ids_of(const std::vector<TextPrompt>& prompts) {
  std::vector<int> ids;
  for (const auto& p : prompts) ids.push_back(p.class_id);
  return ids;
}

void check_prompts(const std::vector<TextPrompt>& prompts) {
  if (prompts.empty()) throw DegenerateInput("zero-shot scoring needs at least one class prompt");
  std::vector<int> ids = class_ids_of(prompts);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ContractViolation("prompt set repeats a class id");
  }
}

}  // namespace

Mat VideoTextModel::embed_samples(std::span<const synth::Triplet* const> samples) const {
  std::vector<const VideoClip*> clips;
  for (const auto* s : samples) clips.push_back(&s->video);
  return video_.embed(clips);
}

Mat VideoTextModel::embed_prompts(const std::vector<TextPrompt>& prompts) const {
  return text_.embed(prompts);
}

std::string VideoTextModel::fingerprint() const {
  return combined_fingerprint(video_.params().checksum(), text_.params().checksum());
}

Mat SkeletonTextModel::embed_samples(std::span<const synth::Triplet* const> samples) const {
  std::vector<const SkeletonSequence*> seqs;
  for (const auto* s : samples) seqs.push_back(&s->skeleton);
  return skeleton_.embed(seqs);
}

Mat SkeletonTextModel::embed_prompts(const std::vector<TextPrompt>& prompts) const {
  return text_.embed(prompts);
}

std::string SkeletonTextModel::fingerprint() const {
  return combined_fingerprint(skeleton_.params().checksum(), text_.params().checksum());
}

int argmax_class(const Eigen::RowVectorXd& scores, const std::vector<int>& class_ids) {
  if (scores.size() == 0 || static_cast<std::size_t>(scores.size()) != class_ids.size()) {
    throw DimensionMismatch("argmax_class: one score per class id required");
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < class_ids.size(); ++j) {
    const double s = scores(static_cast<Eigen::Index>(j));
    const double b = scores(static_cast<Eigen::Index>(best));
    if (!std::isfinite(s)) throw DegenerateInput("argmax_class: non-finite score");
    if (s > b || (s == b && class_ids[j] < class_ids[best])) best = j;
  }
  return class_ids[best];
}

int zero_shot_classify(const ZeroShotModel& model, const synth::Triplet& sample,
                       const std::vector<TextPrompt>& prompts) {
  check_prompts(prompts);
  const synth::Triplet* one[] = {&sample};
  const LogitMatrix sims = similarity_matrix(model.embed_samples(one), model.embed_prompts(prompts),
                                             {}, class_ids_of(prompts));
  return argmax_class(sims.values.row(0), sims.col_ids);
}

// ---------------------------------------------------------------------------

SplitSide parse_split_side(const std::string& text) {
  if (text == "seen") return SplitSide::kSeen;
  if (text == "unseen") return SplitSide::kUnseen;
  throw ConfigError("split side must be seen or unseen, got `" + text + "`");
}

namespace {

std::vector<int> dataset_ids(const synth::Dataset& ds) {
  std::vector<int> ids;
  for (const auto& a : ds.actions) ids.push_back(a.class_id);
  return ids;
}

ZeroShotReport empty_report(const synth::SplitSpec& split, SplitSide side,
                            const std::vector<int>& ids) {
  ZeroShotReport r;
  r.side = side == SplitSide::kSeen ? "seen" : "unseen";
  r.seen_ids = split.seen;
  r.unseen_ids = split.unseen;
  r.class_ids = ids;
  r.counts.assign(ids.size(), 0);
  r.correct.assign(ids.size(), 0);
  r.confusion = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(ids.size()),
                                      static_cast<Eigen::Index>(ids.size()));
  return r;
}

void record_prediction(ZeroShotReport& r, int truth, int predicted) {
  const auto pos = [&](int id) {
    return static_cast<Eigen::Index>(std::find(r.class_ids.begin(), r.class_ids.end(), id) -
                                     r.class_ids.begin());
  };
  const Eigen::Index i = pos(truth);
  const Eigen::Index j = pos(predicted);
  r.confusion(i, j) += 1;
  r.counts[static_cast<std::size_t>(i)] += 1;
  if (i == j) r.correct[static_cast<std::size_t>(i)] += 1;
  r.samples += 1;
}

void finish_report(ZeroShotReport& r) {
  int correct = 0;
  r.per_class_accuracy.clear();
  for (std::size_t k = 0; k < r.class_ids.size(); ++k) {
    r.per_class_accuracy.push_back(r.counts[k] ? static_cast<double>(r.correct[k]) / r.counts[k] : 0.0);
    correct += r.correct[k];
  }
  r.top1 = r.samples ? static_cast<double>(correct) / r.samples : 0.0;
}

std::vector<int> side_ids(const synth::Dataset& dataset, const synth::SplitSpec& split,
                          SplitSide side) {
  split.validate(dataset_ids(dataset));
  std::vector<int> ids = split.side(side == SplitSide::kUnseen);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

ZeroShotReport evaluate_split(const ZeroShotModel& model, const synth::Dataset& dataset,
                              const synth::SplitSpec& split, SplitSide side) {
  const std::vector<int> ids = side_ids(dataset, split, side);
  const std::vector<TextPrompt> prompts = dataset.class_prompts(ids);
  const auto samples = dataset.samples_of(ids);
  ZeroShotReport r = empty_report(split, side, ids);
  r.model_fingerprint = model.fingerprint();
  if (samples.empty()) throw DegenerateInput("evaluate_split: no samples on the requested side");
  const LogitMatrix sims =
      similarity_matrix(model.embed_samples(samples), model.embed_prompts(prompts), {}, ids);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    record_prediction(r, samples[i]->class_id(),
                      argmax_class(sims.values.row(static_cast<Eigen::Index>(i)), ids));
  }
  finish_report(r);
  return r;
}

std::string ZeroShotReport::to_json() const {
  nlohmann::ordered_json j;
  j["side"] = side;
  j["model_fingerprint"] = model_fingerprint;
  j["seen_class_ids"] = seen_ids;
  j["unseen_class_ids"] = unseen_ids;
  j["samples"] = samples;
  j["top1"] = top1;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < class_ids.size(); ++k) {
    per.push_back({{"class_id", class_ids[k]},
                   {"count", counts[k]},
                   {"correct", correct[k]},
                   {"accuracy", per_class_accuracy[k]}});
  }
  j["per_class"] = per;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < confusion.rows(); ++i) {
    std::vector<int> row;
    for (Eigen::Index k = 0; k < confusion.cols(); ++k) row.push_back(confusion(i, k));
    rows.push_back(row);
  }
  j["confusion"] = {{"class_ids", class_ids}, {"counts", rows}};
  return j.dump(2) + "\n";
}

double harmonic_mean(const std::vector<double>& values) {
  if (values.empty()) throw DegenerateInput("harmonic_mean: no values");
  double inv = 0.0;
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ContractViolation("harmonic_mean: every value must be positive and finite");
    }
    inv += 1.0 / v;
  }
  return static_cast<double>(values.size()) / inv;
}

// ---------------------------------------------------------------------------

int fusion_classify(const LogitMatrix& video_row, const LogitMatrix& skeleton_row) {
  if (video_row.col_ids != skeleton_row.col_ids) {
    throw ContractViolation("fusion: the two prompt embeddings disagree on class ids");
  }
  if (video_row.rows() != 1 || skeleton_row.rows() != 1) {
    throw DimensionMismatch("fusion: expects one similarity row per side");
  }
  const Eigen::RowVectorXd fused = 0.5 * (video_row.values.row(0) + skeleton_row.values.row(0));
  return argmax_class(fused, video_row.col_ids);
}

int fusion_classify(const ZeroShotModel& video_side, const ZeroShotModel& skeleton_side,
                    const synth::Triplet& sample, const std::vector<TextPrompt>& prompts) {
  check_prompts(prompts);
  const synth::Triplet* one[] = {&sample};
  const std::vector<int> ids = class_ids_of(prompts);
  return fusion_classify(
      similarity_matrix(video_side.embed_samples(one), video_side.embed_prompts(prompts), {}, ids),
      similarity_matrix(skeleton_side.embed_samples(one), skeleton_side.embed_prompts(prompts), {}, ids));
}

ZeroShotReport evaluate_fusion(const ZeroShotModel& video_side, const ZeroShotModel& skeleton_side,
                               const synth::Dataset& dataset, const synth::SplitSpec& split,
                               SplitSide side) {
  const std::vector<int> ids = side_ids(dataset, split, side);
  const std::vector<TextPrompt> prompts = dataset.class_prompts(ids);
  const auto samples = dataset.samples_of(ids);
  if (samples.empty()) throw DegenerateInput("evaluate_fusion: no samples on the requested side");
  ZeroShotReport r = empty_report(split, side, ids);
  r.model_fingerprint = video_side.fingerprint() + "+" + skeleton_side.fingerprint();
  const LogitMatrix sv = similarity_matrix(video_side.embed_samples(samples),
                                           video_side.embed_prompts(prompts), {}, ids);
  const LogitMatrix ss = similarity_matrix(skeleton_side.embed_samples(samples),
                                           skeleton_side.embed_prompts(prompts), {}, ids);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    LogitMatrix a{sv.values.row(row), {0}, ids};
    LogitMatrix b{ss.values.row(row), {0}, ids};
    record_prediction(r, samples[i]->class_id(), fusion_classify(a, b));
  }
  finish_report(r);
  return r;
}

// ---------------------------------------------------------------------------

Mat saliency_map(const VideoEncoder& video, const TextEncoder& text, const VideoClip& clip,
                 const TextPrompt& prompt) {
  ad::Tape tape;
  const BoundParams bound = bind(video.params(), tape, true);
  const VideoClip* one[] = {&clip};
  std::vector<int> lengths;
  const ad::Var x = tape.variable(video.stack_input(one, &lengths));
  const ad::Var z = video.embed(x, lengths, bound);
  const ad::Var t = tape.constant(text.embed({prompt}));
  const ad::Var cosine = ad::sum(ad::hadamard(z, t));
  tape.backward(cosine);
  const int hw = clip.height * clip.width;
  Mat out = Mat::Zero(clip.length(), hw);
  const Mat& g = x.grad();
  if (g.size() == 0) return out;
  if (!g.allFinite()) throw DegenerateInput("saliency: non-finite input gradient");
  for (int c = 0; c < clip.channels; ++c) out += g.middleCols(c * hw, hw).array().square().matrix();
  return out.array().sqrt().matrix();
}

MaskContrast mask_contrast(const Mat& saliency, const Mat& mask) {
  if (saliency.rows() != mask.rows() || saliency.cols() != mask.cols()) {
    throw DimensionMismatch("mask_contrast: saliency and mask shapes differ");
  }
  double in = 0.0;
  double out = 0.0;
  long n_in = 0;
  long n_out = 0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask.data()[i] > 0.5) {
      in += saliency.data()[i];
      ++n_in;
    } else {
      out += saliency.data()[i];
      ++n_out;
    }
  }
  if (n_in == 0 || n_out == 0) throw DegenerateInput("mask_contrast: mask is empty or full");
  return {in / static_cast<double>(n_in), out / static_cast<double>(n_out)};
}

void write_saliency_pgm(const Mat& saliency, int height, int width,
                        const std::filesystem::path& path) {
  if (saliency.cols() != static_cast<Eigen::Index>(height) * width) {
    throw DimensionMismatch("saliency map does not match height x width");
  }
  const auto frames = static_cast<int>(saliency.rows());
  const double peak = saliency.size() ? saliency.maxCoeff() : 0.0;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << frames * width << " " << height << "\n255\n";
  for (int y = 0; y < height; ++y) {
    for (int f = 0; f < frames; ++f) {
      for (int x = 0; x < width; ++x) {
        const double v = peak > 0.0 ? saliency(f, y * width + x) / peak : 0.0;
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
}

void write_saliency_raw(const Mat& saliency, int height, int width,
                        const std::filesystem::path& path) {
  ByteWriter w;
  const std::string_view magic = "SKISAL01";
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(magic.data()), magic.size()));
  w.u32(static_cast<std::uint32_t>(saliency.rows()));
  w.u32(static_cast<std::uint32_t>(height));
  w.u32(static_cast<std::uint32_t>(width));
  for (Eigen::Index i = 0; i < saliency.rows(); ++i) {
    for (Eigen::Index j = 0; j < saliency.cols(); ++j) w.f64(saliency(i, j));
  }
  w.save(path);
}

AlignmentReport alignment_report(const ZeroShotModel& model, const synth::Dataset& dataset,
                                 const std::vector<int>& class_ids) {
  AlignmentReport r;
  if (class_ids.empty()) throw DegenerateInput("alignment_report: no classes");
  double sum = 0.0;
  for (int id : class_ids) {
    const auto samples = dataset.samples_of({id});
    if (samples.empty()) {
      throw DegenerateInput("alignment_report: class " + std::to_string(id) + " has no samples");
    }
    const Mat z = model.embed_samples(samples);
    const Mat t = model.embed_prompts({dataset.class_prompt(id)});
    const LogitMatrix sims = similarity_matrix(z, t);
    const double mean = sims.values.mean();
    r.class_ids.push_back(id);
    r.mean_cosine.push_back(mean);
    sum += mean;
  }
  r.overall = sum / static_cast<double>(class_ids.size());
  return r;
}

}  // namespace ski
