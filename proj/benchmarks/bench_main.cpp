#include "ski/autodiff.hpp"
#include "ski/encoders.hpp"
#include "ski/losses.hpp"
#include "ski/lvlm.hpp"
#include "ski/rng.hpp"
#include "ski/synthdata.hpp"
#include "ski/training.hpp"
#include "ski/zseval.hpp"

#include <benchmark/benchmark.h>

using namespace ski;

namespace {

const synth::Dataset& dataset() {
  static const synth::Dataset ds = synth::generate_dataset(synth::DatasetConfig{});
  return ds;
}

std::vector<const synth::Triplet*> batch(int n) {
  std::vector<const synth::Triplet*> out;
  for (int i = 0; i < n; ++i) out.push_back(&dataset().triplets[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

static void BM_GenerateDataset(benchmark::State& state) {
  synth::DatasetConfig c;
  c.samples_per_class = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(synth::generate_dataset(c));
  state.SetItemsProcessed(state.iterations() * c.num_classes * c.samples_per_class);
}
BENCHMARK(BM_GenerateDataset)->Arg(4)->Arg(24)->Unit(benchmark::kMillisecond);

static void BM_VideoForwardBackward(benchmark::State& state) {
  const auto& ds = dataset();
  const VideoEncoder enc(ds.config.channels, ds.config.height, ds.config.width, EncoderConfig{}, 1);
  const auto samples = batch(static_cast<int>(state.range(0)));
  std::vector<const VideoClip*> clips;
  for (const auto* t : samples) clips.push_back(&t->video);
  for (auto _ : state) {
    ad::Tape tape;
    const BoundParams b = bind(enc.params(), tape);
    const ad::Var z = enc.embed(tape, b, clips);
    tape.backward(ad::sum(z));
    benchmark::DoNotOptimize(b.vars[0].grad().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_VideoForwardBackward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

static void BM_SkeletonForwardBackward(benchmark::State& state) {
  const auto& ds = dataset();
  const SkeletonEncoder enc(ds.config.joints, EncoderConfig{}, 1);
  const auto samples = batch(static_cast<int>(state.range(0)));
  std::vector<const SkeletonSequence*> seqs;
  for (const auto* t : samples) seqs.push_back(&t->skeleton);
  for (auto _ : state) {
    ad::Tape tape;
    const BoundParams b = bind(enc.params(), tape);
    tape.backward(ad::sum(enc.embed(tape, b, seqs)));
    benchmark::DoNotOptimize(b.vars[0].grad().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SkeletonForwardBackward)->Arg(16)->Unit(benchmark::kMicrosecond);

static void BM_ScdLoss(benchmark::State& state) {
  Rng rng(1);
  const auto n = state.range(0);
  Mat zv(n, 32), zs(n, 32), t(8, 32);
  for (Mat* m : {&zv, &zs, &t}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) (*m)(i) = rng.normal();
    *m = l2_normalize_rows(*m);
  }
  std::vector<int> targets;
  for (Eigen::Index i = 0; i < n; ++i) targets.push_back(static_cast<int>(i % 8));
  for (auto _ : state) {
    ad::Tape tape;
    const ad::Var v = tape.variable(zv), s = tape.variable(zs), tt = tape.constant(t);
    const ad::Var f_lv = ad::matmul_nt(v, tt), f_ls = ad::matmul_nt(s, tt);
    const ad::Var loss = ad::add(ad::add(graph::cross_entropy(ad::scale(f_lv, 1 / 0.07), targets),
                                         graph::cross_entropy(ad::scale(f_ls, 1 / 0.07), targets)),
                                 ad::scale(graph::distill_mse(f_lv, f_ls), 10.0));
    tape.backward(loss);
    benchmark::DoNotOptimize(v.grad().data());
  }
}
BENCHMARK(BM_ScdLoss)->Arg(16)->Arg(128);

static void BM_ZeroShotUnseen(benchmark::State& state) {
  const auto& ds = dataset();
  const VideoClipModel vc = make_videoclip(ModelConfig{}, ds.config, 1);
  const VideoTextModel model(vc.video, vc.text);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_split(model, ds, ds.split, SplitSide::kUnseen).top1);
}
BENCHMARK(BM_ZeroShotUnseen)->Unit(benchmark::kMillisecond);

static void BM_ToyLmLogits(benchmark::State& state) {
  const lvlm::ToyCausalLM lm;
  Rng rng(2);
  Mat seq(state.range(0), lm.width());
  for (Eigen::Index i = 0; i < seq.size(); ++i) seq(i) = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(lm.logits(seq));
}
BENCHMARK(BM_ToyLmLogits)->Arg(16)->Arg(48)->Unit(benchmark::kMicrosecond);

static void BM_SaliencyMap(benchmark::State& state) {
  const auto& ds = dataset();
  const VideoClipModel vc = make_videoclip(ModelConfig{}, ds.config, 1);
  const auto& t = ds.triplets[0];
  for (auto _ : state) benchmark::DoNotOptimize(saliency_map(vc.video, vc.text, t.video, t.prompt));
}
BENCHMARK(BM_SaliencyMap)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
