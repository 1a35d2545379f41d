#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include "envedit/io.hpp"
#include "envedit/speaker.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

namespace envedit {
namespace {

struct SpeakerFixture : ::testing::Test {
  WorldSpec spec = testing::small_spec(2, 6, 6);
  World world = generate_world(spec, 29);
  RenderContext ctx = make_render_context(spec, 29);
  Vocabulary vocab = Vocabulary::for_classes(world.environments[0].class_names);
  EnvLookup envs = make_lookup(world.environments);

  Speaker make(bool style_aware, int hidden = 32, int word = 16, std::uint64_t seed = 3) const {
    SpeakerConfig cfg;
    cfg.style_aware = style_aware;
    cfg.hidden = hidden;
    cfg.word_dim = word;
    cfg.seed = seed;
    return Speaker(vocab, spec.feature_dim, ctx.encoder, cfg);
  }

  std::vector<Episode> episodes(int n, std::uint64_t seed) const {
    std::vector<const Environment*> all;
    for (const auto& e : world.environments) all.push_back(&e);
    return sample_episodes(all, n, {1, 3}, seed);
  }
};

TEST_F(SpeakerFixture, MeanStyleIsArithmeticMeanOfEncodings) {
  auto sp = make(true);
  const auto& pano = world.environments[0].panoramas[2];
  Vec expect(static_cast<std::size_t>(spec.style_dim), 0.0);
  for (const auto& v : pano.views) {
    auto s = ctx.encoder.encode(v.feature).values;
    for (std::size_t i = 0; i < s.size(); ++i) expect[i] += s[i] / 36.0;
  }
  auto got = sp.mean_style(pano);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-9);

  Panorama shuffled = pano;
  Rng rng(4);
  std::shuffle(shuffled.views.begin(), shuffled.views.end(), rng);
  auto perm = sp.mean_style(shuffled);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(perm[i], got[i], 1e-12);

  Panorama same = pano;
  for (auto& v : same.views) v.feature = pano.views[5].feature;
  auto single = ctx.encoder.encode(pano.views[5].feature).values;
  auto all_same = sp.mean_style(same);
  for (std::size_t i = 0; i < single.size(); ++i) EXPECT_NEAR(all_same[i], single[i], 1e-12);

  auto [h, c] = sp.init_decoder_state(pano);
  EXPECT_EQ(h.size(), 32u);
  EXPECT_EQ(c.size(), 32u);
}

TEST_F(SpeakerFixture, LossGradientsThroughStyleEncoder) {
  auto sp = make(true, 8, 6);
  // The output layer starts near zero; enlarge it so upstream gradients sit well above
  // finite-difference round-off.
  for (double& w : sp.params().get("output.weight").value) w *= 100.0;
  auto eps = episodes(2, 5);
  const auto& env = lookup_env(envs, eps[0].env_id);
  auto loss = [&](nn::Tape& t) { return sp.loss(t, env, eps[0].path, eps[0].instruction); };
  // Loss is O(1), so central differences carry about 3e-11 of round-off.
  auto r = testing::grad_check(sp.params(), loss, 300, 12, 1e-4, 1e-8, 1e-5, 1e-10);
  EXPECT_EQ(r.failures, 0) << r.worst_name << " rel err " << r.worst;
  EXPECT_GE(r.checked, 50);

  // Every style-path scalar on its own.
  int checked = 0;
  sp.params().zero_grad();
  {
    nn::Tape t;
    t.backward(loss(t));
  }
  for (const char* name : {"style_encoder.weight", "style_encoder.bias", "style_fc.weight"}) {
    auto& p = sp.params().get(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + 1e-5;
      nn::Tape a;
      const double up = a.scalar(loss(a));
      p.value[i] = saved - 1e-5;
      nn::Tape b;
      const double down = b.scalar(loss(b));
      p.value[i] = saved;
      const double numeric = (up - down) / 2e-5;
      EXPECT_TRUE(testing::rel_err(numeric, p.grad[i]) < 1e-4 || std::abs(numeric - p.grad[i]) < 1e-10)
          << name << "[" << i << "] " << numeric << " vs " << p.grad[i];
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

TEST_F(SpeakerFixture, InitialLossNearLogVocab) {
  auto sp = make(true);
  auto eps = episodes(10, 7);
  for (const auto& ep : eps) {
    nn::Tape t;
    double l = t.scalar(sp.loss(t, lookup_env(envs, ep.env_id), ep.path, ep.instruction));
    EXPECT_NEAR(l, std::log(static_cast<double>(vocab.size())), 0.05);
  }
}

TEST_F(SpeakerFixture, BaselineIgnoresStylePerturbation) {
  auto sp = make(false);
  auto eps = episodes(5, 9);
  for (const auto& ep : eps) {
    Environment env = lookup_env(envs, ep.env_id);
    auto before = sp.generate(env, ep.path, DecodeMode::kGreedy);
    std::set<int> route_views;
    for (std::size_t i = 0; i + 1 < ep.path.size(); ++i) {
      auto [th, ph] = direction_between(env, ep.path[i], ep.path[i + 1]);
      if (i == 0) route_views.insert(nearest_view_index(th, ph));
    }
    for (int k = 0; k < 36; ++k) {
      if (route_views.count(k)) continue;
      for (double& x : env.panoramas[static_cast<std::size_t>(ep.start())].views[static_cast<std::size_t>(k)].feature) x *= 50.0;
    }
    EXPECT_EQ(sp.generate(env, ep.path, DecodeMode::kGreedy).tokens, before.tokens);
  }
}

TEST_F(SpeakerFixture, GenerationDeterministicAndBounded) {
  auto sp = make(true);
  auto ep = episodes(1, 3)[0];
  const auto& env = lookup_env(envs, ep.env_id);
  auto a = sp.generate(env, ep.path, DecodeMode::kGreedy);
  auto b = sp.generate(env, ep.path, DecodeMode::kGreedy);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_LE(static_cast<int>(a.tokens.size()), sp.max_length(ep.hops()));
  EXPECT_EQ(a.truncated, a.tokens.back() != "stop");
  auto s1 = sp.generate(env, ep.path, DecodeMode::kSample, 11);
  auto s2 = sp.generate(env, ep.path, DecodeMode::kSample, 11);
  EXPECT_EQ(s1.tokens, s2.tokens);
  EXPECT_EQ(sp.max_length(3), 16);
}

TEST_F(SpeakerFixture, MemorizesSingleExample) {
  SpeakerConfig cfg;
  cfg.iterations = 800;
  cfg.batch_size = 1;
  cfg.learning_rate = 1e-2;
  auto ep = episodes(1, 21);
  auto result = train_speaker(Speaker(vocab, spec.feature_dim, ctx.encoder, cfg), ep, envs);
  EXPECT_LT(result.losses.back(), 0.05);
  // Block averages of the loss never increase.
  std::vector<double> ma;
  for (std::size_t i = 0; i + 100 <= result.losses.size(); i += 100) {
    double s = 0;
    for (std::size_t j = i; j < i + 100; ++j) s += result.losses[j];
    ma.push_back(s / 100.0);
  }
  for (std::size_t i = 1; i < ma.size(); ++i) EXPECT_LE(ma[i], ma[i - 1] + 1e-9);
  EXPECT_EQ(result.speaker.generate(lookup_env(envs, ep[0].env_id), ep[0].path, DecodeMode::kGreedy).tokens,
            ep[0].instruction);
}

TEST_F(SpeakerFixture, TrainingIsDeterministic) {
  SpeakerConfig cfg;
  cfg.iterations = 5;
  cfg.batch_size = 4;
  cfg.seed = 8;
  auto eps = episodes(20, 2);
  auto a = train_speaker(Speaker(vocab, spec.feature_dim, ctx.encoder, cfg), eps, envs);
  auto b = train_speaker(Speaker(vocab, spec.feature_dim, ctx.encoder, cfg), eps, envs);
  EXPECT_EQ(a.speaker.params().serialize(), b.speaker.params().serialize());
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_THROW(train_speaker(a.speaker, {}, envs), Error);
}

struct TrainedSpeaker : SpeakerFixture {
  static const SpeakerTrainResult& trained(bool style_aware) {
    static std::map<bool, SpeakerTrainResult> cache;
    auto it = cache.find(style_aware);
    if (it != cache.end()) return it->second;
    TrainedSpeaker f;
    SpeakerConfig cfg;
    cfg.style_aware = style_aware;
    cfg.iterations = 500;
    cfg.batch_size = 16;
    cfg.learning_rate = 5e-3;
    cfg.seed = 1;
    auto r = train_speaker(Speaker(f.vocab, f.spec.feature_dim, f.ctx.encoder, cfg), f.episodes(150, 77), f.envs);
    return cache.emplace(style_aware, std::move(r)).first->second;
  }
  void TestBody() override {}
};

TEST_F(SpeakerFixture, ConvergesToOracleOnHeldInPaths) {
  const auto& result = TrainedSpeaker::trained(true);
  auto held_in = episodes(150, 77);
  int exact = 0;
  for (const auto& ep : held_in) {
    exact += result.speaker.generate(lookup_env(envs, ep.env_id), ep.path, DecodeMode::kGreedy).tokens == ep.instruction;
  }
  double rate = exact / static_cast<double>(held_in.size());
  EXPECT_GE(rate, 0.9) << "exact-match rate " << rate;
}

TEST_F(SpeakerFixture, StyleAwareOutputRespondsToStartStyle) {
  const auto& aware = TrainedSpeaker::trained(true).speaker;
  const auto& baseline = TrainedSpeaker::trained(false).speaker;
  auto eps = episodes(30, 123);
  bool aware_changed = false;
  for (const auto& ep : eps) {
    if (ep.hops() < 1) continue;
    const auto& original = lookup_env(envs, ep.env_id);
    auto [th, ph] = direction_between(original, ep.path[0], ep.path[1]);
    const int route_view = nearest_view_index(th, ph);
    auto aware_before = aware.generate(original, ep.path, DecodeMode::kGreedy).tokens;
    auto base_before = baseline.generate(original, ep.path, DecodeMode::kGreedy).tokens;
    for (double scale : {5.0, 20.0, 100.0}) {
      Environment env = original;
      for (int k = 0; k < 36; ++k) {
        if (k == route_view) continue;
        auto& f = env.panoramas[static_cast<std::size_t>(ep.start())].views[static_cast<std::size_t>(k)].feature;
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = f[i] * scale + (i % 2 ? scale : -scale);
      }
      EXPECT_EQ(baseline.generate(env, ep.path, DecodeMode::kGreedy).tokens, base_before);
      if (aware.generate(env, ep.path, DecodeMode::kGreedy).tokens != aware_before) aware_changed = true;
    }
  }
  EXPECT_TRUE(aware_changed);
}

TEST_F(SpeakerFixture, BackTranslation) {
  const auto& sp = TrainedSpeaker::trained(true).speaker;
  auto annotated = episodes(150, 77);
  std::vector<const Environment*> seen{&world.environments[0]};
  EXPECT_TRUE(back_translate(sp, seen, annotated, 0, 1).empty());
  auto bt = back_translate(sp, seen, annotated, 15, 4, {1, 3});
  ASSERT_FALSE(bt.empty());
  std::set<std::tuple<std::string, NodeId, NodeId>> taken;
  for (const auto& ep : annotated) taken.emplace(ep.env_id, ep.start(), ep.goal());
  int matches = 0;
  for (const auto& ep : bt) {
    EXPECT_EQ(ep.env_id, world.environments[0].env_id);
    EXPECT_TRUE(ep.synthetic);
    EXPECT_EQ(taken.count({ep.env_id, ep.start(), ep.goal()}), 0u);
    EXPECT_FALSE(ep.instruction.empty());
    matches += ep.instruction == oracle_instruction(world.environments[0], ep.path);
  }
  // Unannotated paths are out of sample, so agreement is reported rather than required.
  std::cout << "back-translation oracle agreement " << matches << "/" << bt.size() << "\n";
  auto again = back_translate(sp, seen, annotated, 15, 4, {1, 3});
  ASSERT_EQ(again.size(), bt.size());
  for (std::size_t i = 0; i < bt.size(); ++i) EXPECT_EQ(again[i].instruction, bt[i].instruction);
}

TEST_F(SpeakerFixture, CheckpointRoundTrip) {
  auto sp = make(false, 8, 6, 42);
  auto dir = std::filesystem::temp_directory_path() / "envedit_speaker_test";
  std::filesystem::create_directories(dir);
  const std::string stem = (dir / "spk").string();
  save_speaker(sp, stem);
  auto loaded = load_speaker(stem);
  EXPECT_EQ(loaded.params().serialize(), sp.params().serialize());
  EXPECT_FALSE(loaded.config().style_aware);
  EXPECT_EQ(loaded.vocab().tokens(), sp.vocab().tokens());
  auto blob = io::read_file(stem + ".bin");
  blob[blob.size() - 1] ^= 1;
  io::write_file(stem + ".bin", blob);
  try {
    load_speaker(stem);
    FAIL() << "expected hash mismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "hash_mismatch");
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace envedit
