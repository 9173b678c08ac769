#include "ski/error.hpp"
#include "ski/lvlm.hpp"
#include "ski/training.hpp"

#include "fixtures.hpp"
#include "gradcheck.hpp"

#include <doctest.h>

using namespace ski;
using namespace ski::lvlm;
using ski::testing::random_mat;

namespace {

LmConfig small_lm() {
  LmConfig c;
  c.width = 16;
  c.layers = 1;
  c.heads = 2;
  c.mlp_width = 16;
  return c;
}

ProjectorConfig small_projectors() {
  ProjectorConfig p;
  p.d_v = 6;
  p.d_s = 6;
  p.n_v = 3;
  p.n_s = 6;
  p.k = 16;
  return p;
}

struct Setup {
  synth::Dataset data = synth::generate_dataset(ski::testing::tiny_data());
  VideoClipModel vc = make_videoclip(ski::testing::tiny_model(), data.config, 1);
  SkeletonClipModel sk = make_skeletonclip(ski::testing::tiny_model(), data.config, 1);
  ToyCausalLM lm{small_lm()};
};

TokenBlock query(const ToyCausalLM& lm, const std::string& text = "what is the person doing ?") {
  return {lm.token_embeddings(synth::Vocabulary::instance().tokenize(text)), Modality::kText};
}

}  // namespace

TEST_CASE("prompt spans are contiguous, ordered and cover the sequence") {
  const ToyCausalLM lm(small_lm());
  Rng rng(1);
  const TokenBlock q_t = query(lm);
  const TokenBlock q_v{random_mat(rng, 3, 16), Modality::kVisual};
  const TokenBlock q_s{random_mat(rng, 6, 16), Modality::kSkeleton};
  const AssembledPrompt with = assemble_prompt(lm, q_t, q_v, &q_s);
  const AssembledPrompt without = assemble_prompt(lm, q_t, q_v, nullptr);

  int at = 0;
  for (const Span& s : with.spans) {
    CHECK(s.begin == at);
    at += s.length;
  }
  CHECK(at == with.length());
  CHECK(with.length() - without.length() == 6);
  CHECK(without.span("skeleton") == nullptr);
  REQUIRE(with.span("skeleton") != nullptr);

  // Hand layout: user: | query words | 3 visual | 6 skeleton | assistant:
  const int nq = q_t.size();
  CHECK(with.span("user")->begin == 0);
  CHECK(with.span("query")->begin == 1);
  CHECK(with.span("visual")->begin == 1 + nq);
  CHECK(with.span("skeleton")->begin == 4 + nq);
  CHECK(with.span("assistant")->begin == 10 + nq);
  const auto& v = synth::Vocabulary::instance();
  CHECK(with.tokens.row(0) == lm.token_embeddings({v.id("user:")}).row(0));
  CHECK(with.tokens.middleRows(1 + nq, 3) == q_v.tokens);
  CHECK(with.tokens.middleRows(4 + nq, 6) == q_s.tokens);
  CHECK(with.tokens.bottomRows(1) == lm.token_embeddings({v.id("assistant:")}));

  const TokenBlock narrow{random_mat(rng, 3, 8), Modality::kVisual};
  CHECK_THROWS_AS(assemble_prompt(lm, q_t, narrow, nullptr), DimensionMismatch);
}

TEST_CASE("projection: zero, identity and random maps") {
  Rng rng(2);
  const Mat tokens = random_mat(rng, 5, 4);
  CHECK(project(Mat::Zero(4, 7), tokens, Modality::kVisual).tokens.isZero());
  CHECK(project(Mat::Identity(4, 4), tokens, Modality::kVisual).tokens == tokens);
  const Mat w = random_mat(rng, 4, 7);
  const TokenBlock b = project(w, tokens, Modality::kSkeleton);
  CHECK(b.size() == 5);
  CHECK(b.modality == Modality::kSkeleton);
  CHECK((b.tokens - tokens * w).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(project(Mat::Zero(3, 7), tokens, Modality::kVisual), DimensionMismatch);
}

TEST_CASE("the toy LM is causal") {
  const ToyCausalLM lm(small_lm());
  Rng rng(3);
  const Mat seq = random_mat(rng, 9, 16);
  Mat changed = seq;
  changed.bottomRows(3) = random_mat(rng, 3, 16);
  const Mat a = lm.logits(seq), b = lm.logits(changed);
  CHECK((a.topRows(6) - b.topRows(6)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.bottomRows(3) - b.bottomRows(3)).cwiseAbs().maxCoeff() > 1e-6);
  CHECK((lm.logits(seq.topRows(6)) - a.topRows(6)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_FALSE(lm.params().any_trainable());
  CHECK(ToyCausalLM(small_lm()).checksum() == lm.checksum());
}

TEST_CASE("visual tokens are the video encoder's per-frame features") {
  const Setup s;
  const VideoClip& clip = s.data.triplets[0].video;
  CHECK(extract_visual_tokens(s.vc.video, clip) == s.vc.video.frame_tokens(clip));
  CHECK(extract_visual_tokens(s.vc.video, clip).rows() == clip.length());
  const auto& seq = s.data.triplets[0].skeleton;
  CHECK(extract_skeleton_tokens(s.sk.skeleton, seq) == s.sk.skeleton.frame_tokens(seq));
}

TEST_CASE("projector training moves only the projectors and lowers the training NLL") {
  Setup s;
  const CaptionSplit split = make_caption_split(s.data, s.vc.video, &s.sk.skeleton, 0.25);
  CHECK(split.train.size() == 12);
  CHECK(split.heldout.size() == 4);
  Projectors proj(small_projectors(), true, 4);
  const auto lm_sum = s.lm.checksum();
  const auto video_sum = s.vc.video.params().checksum();
  const auto skel_sum = s.sk.skeleton.params().checksum();
  const auto proj_sum = proj.params().checksum();
  LvlmConfig cfg;
  cfg.epochs = 12;
  cfg.lr = 0.05;
  const double before = teacher_forced_score(s.lm, proj, split.train, cfg.query, true).nll;
  RunRecord rec("lvlm", "00", 1);
  train_projectors(s.lm, proj, split, cfg, s.vc.video, &s.sk.skeleton, &rec);
  const double after = teacher_forced_score(s.lm, proj, split.train, cfg.query, true).nll;
  CHECK(after < before);
  CHECK(s.lm.checksum() == lm_sum);
  CHECK(s.vc.video.params().checksum() == video_sum);
  CHECK(s.sk.skeleton.params().checksum() == skel_sum);
  CHECK(proj.params().checksum() != proj_sum);
  CHECK(rec.phase("lvlm").size() == 12);

  Projectors idle(small_projectors(), true, 4);
  cfg.epochs = 0;
  train_projectors(s.lm, idle, split, cfg, s.vc.video, &s.sk.skeleton, nullptr);
  CHECK(idle.params().checksum() == proj_sum);
}

TEST_CASE("a skeleton-free model trains, scores and generates") {
  Setup s;
  const CaptionSplit split = make_caption_split(s.data, s.vc.video, nullptr, 0.25);
  for (const auto& ex : split.train) CHECK_FALSE(ex.skeleton.has_value());
  Projectors proj(small_projectors(), false, 5);
  CHECK_FALSE(proj.has_skeleton());
  CHECK_THROWS_AS(proj.skeleton(), ContractViolation);
  LvlmConfig cfg;
  cfg.epochs = 1;
  cfg.use_skeleton = true;
  CHECK_THROWS_AS(train_projectors(s.lm, proj, split, cfg, s.vc.video, nullptr, nullptr), ContractViolation);
  cfg.use_skeleton = false;
  CHECK_NOTHROW(train_projectors(s.lm, proj, split, cfg, s.vc.video, nullptr, nullptr));
  const CaptionScore score = teacher_forced_score(s.lm, proj, split.heldout, cfg.query, false);
  CHECK(score.tokens > 0);
  CHECK(score.nll > 0.0);
}

TEST_CASE("greedy generation is deterministic and bounded") {
  Setup s;
  const Projectors proj(small_projectors(), true, 6);
  const Mat tokens = extract_visual_tokens(s.vc.video, s.data.triplets[3].video);
  const std::string q = "what is the person doing ?";
  const auto a = generate_caption(s.lm, proj.visual(), proj.params(), tokens, q, 5);
  CHECK(a == generate_caption(s.lm, proj.visual(), proj.params(), tokens, q, 5));
  CHECK(a.size() <= 5);
  for (int id : a) CHECK(id != synth::Vocabulary::instance().eos());
  const auto one = generate_caption(s.lm, proj.visual(), proj.params(), tokens, q, 1);
  CHECK(one.size() <= 1);
  if (!one.empty() && !a.empty()) CHECK(one[0] == a[0]);
  CHECK_THROWS_AS(generate_caption(s.lm, proj.visual(), proj.params(), tokens, q, 0), ContractViolation);
  CHECK(generate_caption_text(s.lm, proj, s.vc.video, s.data.triplets[3].video, q, 5) ==
        synth::Vocabulary::instance().detokenize(a));
}

TEST_CASE("lvlm config validation and round trip") {
  LvlmConfig c;
  c.holdout_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = LvlmConfig{};
  c.epochs = 3;
  c.use_skeleton = false;
  const LvlmConfig back = LvlmConfig::from_kv(c.to_kv());
  CHECK(back.to_kv().canonical() == c.to_kv().canonical());
  CHECK_FALSE(back.use_skeleton);
}
