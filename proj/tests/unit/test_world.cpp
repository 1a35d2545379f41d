#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <set>

#include "envedit/render.hpp"
#include "envedit/world.hpp"
#include "fixtures.hpp"

namespace envedit {
namespace {

using testing::hand_env;
using testing::small_spec;

struct Enumerated {
  double length = INFINITY;
  std::vector<NodeId> path;
};

// Every simple path from a to b; returns the minimum length and, among paths within
// 1e-9 of it, the lexicographically smallest node sequence.
Enumerated enumerate_paths(const Environment& env, NodeId a, NodeId b) {
  Enumerated best;
  std::vector<NodeId> stack{a};
  std::vector<bool> used(env.nodes.size(), false);
  used[static_cast<std::size_t>(a)] = true;
  std::vector<std::pair<double, std::vector<NodeId>>> all;
  std::function<void(NodeId, double)> dfs = [&](NodeId u, double len) {
    if (u == b) {
      all.emplace_back(len, stack);
      return;
    }
    for (auto [v, w] : env.neighbors(u)) {
      if (used[static_cast<std::size_t>(v)]) continue;
      used[static_cast<std::size_t>(v)] = true;
      stack.push_back(v);
      dfs(v, len + w);
      stack.pop_back();
      used[static_cast<std::size_t>(v)] = false;
    }
  };
  dfs(a, 0.0);
  for (const auto& [len, p] : all) best.length = std::min(best.length, len);
  for (const auto& [len, p] : all) {
    if (len <= best.length + 1e-9 && (best.path.empty() || p < best.path)) best.path = p;
  }
  return best;
}

TEST(WorldSpec, RejectsInvalidCounts) {
  auto spec = small_spec();
  spec.num_classes = 1;
  EXPECT_THROW(spec.validate(), Error);
  spec = small_spec();
  spec.nodes_per_env = 0;
  EXPECT_THROW(spec.validate(), Error);
  spec = small_spec();
  spec.style_dim = spec.feature_dim + 1;
  EXPECT_THROW(spec.validate(), Error);
  EXPECT_THROW(generate_world(spec, 1), Error);
}

TEST(GenerateWorld, DeterministicForFixedSeed) {
  auto spec = small_spec(2, 5, 6);
  World a = generate_world(spec, 7);
  World b = generate_world(spec, 7);
  ASSERT_EQ(a.environments.size(), 2u);
  for (std::size_t e = 0; e < a.environments.size(); ++e) {
    const auto& x = a.environments[e];
    const auto& y = b.environments[e];
    ASSERT_EQ(x.nodes.size(), y.nodes.size());
    for (std::size_t n = 0; n < x.nodes.size(); ++n) EXPECT_EQ(x.nodes[n].position, y.nodes[n].position);
    ASSERT_EQ(x.edges.size(), y.edges.size());
    for (std::size_t n = 0; n < x.panoramas.size(); ++n) {
      for (std::size_t k = 0; k < 36; ++k) {
        EXPECT_EQ(x.panoramas[n].views[k].grid, y.panoramas[n].views[k].grid);
        EXPECT_EQ(x.panoramas[n].views[k].feature, y.panoramas[n].views[k].feature);
      }
    }
    EXPECT_EQ(x.appearance_table, y.appearance_table);
  }
  World c = generate_world(spec, 8);
  EXPECT_NE(a.environments[0].panoramas[0].views[0].feature, c.environments[0].panoramas[0].views[0].feature);
}

TEST(GenerateWorld, StructuralInvariants) {
  auto spec = small_spec(5, 9, 6);
  World w = generate_world(spec, 3);
  for (const auto& env : w.environments) {
    EXPECT_TRUE(is_connected(env));
    ASSERT_EQ(env.panoramas.size(), env.nodes.size());
    std::set<int> classes;
    for (const auto& e : env.edges) {
      EXPECT_GT(e.length, 0.0);
      EXPECT_NE(e.a, e.b);
    }
    for (NodeId n = 0; n < env.num_nodes(); ++n) {
      for (auto [m, len] : env.neighbors(n)) {
        auto back = env.neighbors(m);
        auto it = std::find_if(back.begin(), back.end(), [n](const auto& p) { return p.first == n; });
        ASSERT_NE(it, back.end());
        EXPECT_EQ(it->second, len);
      }
    }
    for (const auto& pano : env.panoramas) {
      ASSERT_EQ(pano.views.size(), 36u);
      for (int k = 0; k < 36; ++k) {
        const auto& v = pano.views[static_cast<std::size_t>(k)];
        EXPECT_NEAR(v.heading, (k % 12) * std::numbers::pi / 6.0, 1e-12);
        EXPECT_NEAR(v.elevation, (k / 12 - 1) * std::numbers::pi / 6.0, 1e-12);
        EXPECT_EQ(v.orientation[0], std::cos(v.heading));
        EXPECT_EQ(v.orientation[1], std::sin(v.heading));
        EXPECT_EQ(v.orientation[2], std::cos(v.elevation));
        EXPECT_EQ(v.orientation[3], std::sin(v.elevation));
        EXPECT_EQ(v.feature.size(), static_cast<std::size_t>(spec.feature_dim));
        for (int c : v.grid) {
          EXPECT_GE(c, 1);
          EXPECT_LE(c, spec.num_classes);
          classes.insert(c);
        }
      }
    }
    EXPECT_GE(classes.size(), 2u);
  }
}

TEST(GenerateWorld, ThirteenClassesStayInRange) {
  auto spec = small_spec(3, 6, 13);
  World w = generate_world(spec, 11);
  int max_id = 0;
  for (const auto& env : w.environments) {
    for (const auto& pano : env.panoramas) {
      for (const auto& v : pano.views) max_id = std::max(max_id, *std::max_element(v.grid.begin(), v.grid.end()));
    }
  }
  EXPECT_LE(max_id, 13);
  EXPECT_GE(max_id, 2);
}

TEST(GenerateWorld, FeaturesArePureFunctionOfInputs) {
  auto spec = small_spec(2, 4, 6);
  World w = generate_world(spec, 5);
  auto ctx = make_render_context(spec, 5);
  for (const auto& env : w.environments) {
    const StyleEmbedding base{env.base_style};
    for (const auto& pano : env.panoramas) {
      for (const auto& v : pano.views) {
        EXPECT_EQ(v.feature, render_view(v.grid, env.appearance_table, &base, ctx.modulator, v.jitter_seed, ctx.jitter));
      }
    }
  }
}

TEST(GenerateWorld, HoldoutEnvironmentsAreShifted) {
  auto spec = small_spec(8, 4, 6);
  spec.holdout_fraction = 0.25;
  spec.unseen_style_shift = 3.0;
  World shifted = generate_world(spec, 9);
  spec.unseen_style_shift = 0.0;
  World plain = generate_world(spec, 9);
  ASSERT_EQ(shifted.holdout_envs.size(), 2u);
  for (std::size_t i = 0; i < plain.environments.size(); ++i) {
    const auto& a = plain.environments[i];
    const auto& b = shifted.environments[i];
    bool held = std::count(shifted.holdout_envs.begin(), shifted.holdout_envs.end(), a.env_id) > 0;
    double d = 0.0;
    for (std::size_t k = 0; k < a.base_style.size(); ++k) d += std::pow(a.base_style[k] - b.base_style[k], 2);
    if (held) {
      EXPECT_NEAR(std::sqrt(d), 3.0, 1e-9);
    } else {
      EXPECT_EQ(d, 0.0);
    }
  }
}

TEST(ShortestPath, TrivialCases) {
  auto spec = small_spec();
  auto ctx = make_render_context(spec, 1);
  auto env = hand_env({{0, 0, 0}, {0, 2.5, 0}}, {{0, 1}}, ctx, 3, 4);
  auto self = shortest_path(env, 1, 1);
  EXPECT_EQ(self.path, std::vector<NodeId>{1});
  EXPECT_EQ(self.length, 0.0);
  auto hop = shortest_path(env, 0, 1);
  EXPECT_EQ(hop.path, (std::vector<NodeId>{0, 1}));
  EXPECT_DOUBLE_EQ(hop.length, 2.5);
  EXPECT_THROW(shortest_path(env, 0, 5), Error);
}

TEST(ShortestPath, TiesBreakLexicographically) {
  auto spec = small_spec();
  auto ctx = make_render_context(spec, 1);
  // Square 0-1-3 and 0-2-3 with equal sides.
  auto env = hand_env({{0, 0, 0}, {4, 0, 0}, {0, 4, 0}, {4, 4, 0}}, {{0, 2}, {0, 1}, {1, 3}, {2, 3}}, ctx, 3, 4);
  EXPECT_EQ(shortest_path(env, 0, 3).path, (std::vector<NodeId>{0, 1, 3}));
  EXPECT_EQ(shortest_path(env, 3, 0).path, (std::vector<NodeId>{3, 1, 0}));
}

TEST(ShortestPath, MatchesExhaustiveEnumeration) {
  auto spec = small_spec(6, 8, 6);
  spec.extra_edge_prob = 0.9;
  World w = generate_world(spec, 21);
  int checked = 0;
  for (const auto& env : w.environments) {
    GraphDistances dist(env);
    for (NodeId a = 0; a < env.num_nodes(); ++a) {
      for (NodeId b = 0; b < env.num_nodes(); ++b) {
        auto oracle = enumerate_paths(env, a, b);
        auto got = shortest_path(env, a, b);
        EXPECT_NEAR(got.length, oracle.length, 1e-9);
        EXPECT_EQ(got.path, oracle.path);
        EXPECT_NEAR(dist.distance(a, b), oracle.length, 1e-9);
        ++checked;
      }
    }
  }
  EXPECT_EQ(checked, 6 * 64);
}

TEST(ShortestPath, TriangleInequality) {
  World w = generate_world(small_spec(3, 9, 6), 4);
  for (const auto& env : w.environments) {
    GraphDistances d(env);
    for (NodeId a = 0; a < env.num_nodes(); ++a) {
      for (NodeId b = 0; b < env.num_nodes(); ++b) {
        EXPECT_EQ(d.distance(a, b), d.distance(b, a));
        for (NodeId c = 0; c < env.num_nodes(); ++c) {
          EXPECT_LE(d.distance(a, c), d.distance(a, b) + d.distance(b, c) + 1e-9);
        }
      }
    }
  }
}

TEST(OracleInstruction, SingleNodeIsStop) {
  World w = generate_world(small_spec(1, 4, 6), 2);
  EXPECT_EQ(oracle_instruction(w.environments[0], {2}), std::vector<std::string>{"stop"});
}

TEST(OracleInstruction, ForcedLandmarkAndDirections) {
  auto spec = small_spec();
  auto ctx = make_render_context(spec, 1);
  // 0 -> 1 due north, 1 -> 2 due east (a right turn), 2 -> 3 up a stair.
  auto env = hand_env({{0, 0, 0}, {0, 4, 0}, {4, 4, 0}, {4, 6, 3.5}}, {{0, 1}, {1, 2}, {2, 3}}, ctx, 4, 4, 2);
  env.class_names = {"wall", "door", "table", "chair"};
  auto tokens = oracle_instruction(env, {0, 1, 2, 3});
  EXPECT_EQ(tokens, (std::vector<std::string>{"straight", "door", "right", "door", "up", "door", "stop"}));
  // Replace the view facing north from node 0 with an all-"table" grid.
  env.panoramas[0].views[static_cast<std::size_t>(nearest_view_index(0.0, 0.0))].grid.assign(4, 3);
  EXPECT_EQ(oracle_instruction(env, {0, 1})[1], "table");
  EXPECT_THROW(oracle_instruction(env, {0, 2}), Error);
}

TEST(OracleInstruction, LeftTurnAndDescent) {
  EXPECT_EQ(direction_token(0.0, 3 * std::numbers::pi / 2, 0.0), "left");
  EXPECT_EQ(direction_token(0.0, std::numbers::pi / 4, 0.0), "straight");
  EXPECT_EQ(direction_token(0.0, std::numbers::pi / 2, 0.0), "right");
  EXPECT_EQ(direction_token(0.0, 0.0, -0.5), "down");
  EXPECT_EQ(modal_class({3, 1, 1, 3}), 1);
  EXPECT_EQ(modal_class({4, 4, 2}), 4);
}

TEST(OracleInstruction, InvariantUnderAppearanceResampling) {
  auto spec = small_spec(2, 7, 6);
  World w = generate_world(spec, 13);
  auto ctx = make_render_context(spec, 13);
  Environment env = w.environments[0];
  auto eps = sample_episodes({&env}, 20, {1, 4}, 3);
  Environment other = env;
  other.appearance_table = ctx.appearance.sample(999);
  other.base_style.assign(other.base_style.size(), 1.5);
  testing::rerender(other, ctx);
  ASSERT_NE(other.panoramas[0].views[0].feature, env.panoramas[0].views[0].feature);
  for (const auto& ep : eps) {
    EXPECT_EQ(oracle_instruction(env, ep.path), oracle_instruction(other, ep.path));
    EXPECT_EQ(oracle_instruction(env, ep.path), ep.instruction);
  }
}

TEST(SampleEpisodes, LengthRangeAndShortestPaths) {
  auto spec = small_spec(3, 10, 6);
  World w = generate_world(spec, 17);
  std::vector<const Environment*> envs;
  for (const auto& e : w.environments) envs.push_back(&e);
  auto one_hop = sample_episodes(envs, 30, {1, 1}, 5);
  for (const auto& ep : one_hop) EXPECT_EQ(ep.path.size(), 2u);

  auto eps = sample_episodes(envs, 100, {2, 4}, 5);
  ASSERT_EQ(eps.size(), 100u);
  for (const auto& ep : eps) {
    const auto& env = w.env(ep.env_id);
    EXPECT_GE(ep.hops(), 2);
    EXPECT_LE(ep.hops(), 4);
    auto oracle = enumerate_paths(env, ep.start(), ep.goal());
    EXPECT_EQ(ep.path, oracle.path);
    EXPECT_EQ(ep.instruction.back(), "stop");
    EXPECT_EQ(ep.instruction.size(), static_cast<std::size_t>(2 * ep.hops() + 1));
  }
  auto again = sample_episodes(envs, 100, {2, 4}, 5);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    EXPECT_EQ(eps[i].episode_id, again[i].episode_id);
    EXPECT_EQ(eps[i].path, again[i].path);
  }
  EXPECT_THROW(sample_episodes(envs, 5, {50, 60}, 5), Error);
}

TEST(SplitDataset, EnvironmentDisjointAndDeterministic) {
  auto spec = small_spec(10, 6, 6);
  World w = generate_world(spec, 23);
  std::vector<const Environment*> envs;
  for (const auto& e : w.environments) envs.push_back(&e);
  auto eps = sample_episodes(envs, 300, {1, 3}, 9);
  auto split = split_dataset(eps, 0.3, 4);
  EXPECT_EQ(split.unseen_envs.size(), 3u);
  EXPECT_EQ(split.seen_envs.size(), 7u);
  std::set<std::string> train_envs, val_seen_ids, train_ids;
  for (const auto& ep : split.train) {
    train_envs.insert(ep.env_id);
    train_ids.insert(ep.episode_id);
  }
  for (const auto& ep : split.val_unseen) EXPECT_EQ(train_envs.count(ep.env_id), 0u);
  for (const auto& ep : split.val_seen) {
    EXPECT_TRUE(std::count(split.seen_envs.begin(), split.seen_envs.end(), ep.env_id));
    EXPECT_EQ(train_ids.count(ep.episode_id), 0u);
  }
  EXPECT_EQ(split.train.size() + split.val_seen.size() + split.val_unseen.size(), eps.size());
  auto again = split_dataset(eps, 0.3, 4);
  EXPECT_EQ(again.unseen_envs, split.unseen_envs);
  ASSERT_EQ(again.val_seen.size(), split.val_seen.size());
  for (std::size_t i = 0; i < split.val_seen.size(); ++i) EXPECT_EQ(again.val_seen[i].episode_id, split.val_seen[i].episode_id);
  EXPECT_THROW(split_dataset(eps, 0.0, 4), Error);
  EXPECT_THROW(split_dataset(eps, 1.0, 4), Error);
}

TEST(SplitDataset, MatchesWorldHoldout) {
  auto spec = small_spec(8, 5, 6);
  World w = generate_world(spec, 31);
  std::vector<const Environment*> envs;
  for (const auto& e : w.environments) envs.push_back(&e);
  auto split = split_dataset(sample_episodes(envs, 200, {1, 3}, 2), spec.holdout_fraction, 31);
  EXPECT_EQ(split.unseen_envs, w.holdout_envs);
}

}  // namespace
}  // namespace envedit
