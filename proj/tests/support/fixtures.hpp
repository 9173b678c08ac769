#pragma once

// Tiny datasets and models so training tests run in milliseconds.

#include "ski/synthdata.hpp"
#include "ski/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace ski::testing {

inline synth::DatasetConfig tiny_data(std::uint64_t seed = 11) {
  synth::DatasetConfig c;
  c.num_classes = 4;
  c.samples_per_class = 4;
  c.skeleton_frames = 6;
  c.video_frames = 3;
  c.height = 16;
  c.width = 16;
  c.seen_ratio = 0.5;
  c.seed = seed;
  return c;
}

inline ModelConfig tiny_model() {
  ModelConfig m;
  m.video.hidden = {10};
  m.video.d_out = 6;
  m.skeleton.hidden = {10};
  m.skeleton.d_out = 6;
  m.text.width = 8;
  m.text.d_out = 6;
  return m;
}

inline TrainConfig tiny_train(std::uint64_t seed = 3) {
  TrainConfig t;
  t.epochs_pretrain = 2;
  t.epochs_align = 2;
  t.epochs_finetune = 2;
  t.epochs_scd = 2;
  t.epochs_baseline = 2;
  t.batch_size = 4;
  t.seed = seed;
  return t;
}

// Config text for experiment-level tests: the same tiny shapes as above.
inline std::string tiny_kv() {
  return "data.num_classes = 4\n"
         "data.samples_per_class = 4\n"
         "data.skeleton_frames = 6\n"
         "data.video_frames = 3\n"
         "data.height = 16\n"
         "data.width = 16\n"
         "data.seen_ratio = 0.5\n"
         "model.video.hidden = 10\n"
         "model.video.d_out = 6\n"
         "model.skeleton.hidden = 10\n"
         "model.skeleton.d_out = 6\n"
         "model.text.width = 8\n"
         "train.epochs_pretrain = 1\n"
         "train.epochs_align = 1\n"
         "train.epochs_finetune = 1\n"
         "train.epochs_scd = 1\n"
         "train.epochs_baseline = 1\n"
         "train.batch_size = 4\n"
         "lvlm.epochs = 1\n";
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ski_unit" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ski::testing
