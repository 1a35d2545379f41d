#include "envedit/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <numbers>
#include <queue>
#include <set>
#include <unordered_map>

#include "envedit/render.hpp"

namespace envedit {

namespace {

constexpr double kPathTolerance = 1e-9;

const std::vector<std::string> kDefaultClassNames = {
    "wall",  "floor", "door",  "chair", "table",  "bed",    "sofa",  "plant",
    "window", "sink", "toilet", "tv",   "stairs", "mirror", "shelf", "lamp",
};

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kOriginal: return "original";
    case Variant::kStyleTransfer: return "E_st";
    case Variant::kSynthesis1: return "E_is1";
    case Variant::kSynthesis2: return "E_is2";
    case Variant::kSynthesis1Masked: return "E_is1_m";
    case Variant::kSynthesis2Masked: return "E_is2_m";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::kOriginal, Variant::kStyleTransfer, Variant::kSynthesis1, Variant::kSynthesis2,
                    Variant::kSynthesis1Masked, Variant::kSynthesis2Masked}) {
    if (to_string(v) == s) return v;
  }
  throw Error("unknown_variant", "unknown environment variant '" + s + "'");
}

std::string to_string(StyleScope s) {
  switch (s) {
    case StyleScope::kPerView: return "view";
    case StyleScope::kPerPanorama: return "panorama";
    case StyleScope::kPerEnvironment: return "environment";
  }
  return "unknown";
}

StyleScope style_scope_from_string(const std::string& s) {
  if (s == "view" || s == "per_view") return StyleScope::kPerView;
  if (s == "panorama" || s == "per_panorama") return StyleScope::kPerPanorama;
  if (s == "environment" || s == "per_environment") return StyleScope::kPerEnvironment;
  throw Error("unknown_style_scope", "unknown style scope '" + s + "'");
}

void WorldSpec::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error("invalid_world_spec", what);
  };
  require(num_envs > 0, "num_envs must be positive");
  require(nodes_per_env > 0, "nodes_per_env must be positive");
  require(grid_h > 0 && grid_w > 0, "grid dimensions must be positive");
  require(num_classes >= 2, "num_classes must be at least 2");
  require(feature_dim > 0 && style_dim > 0, "feature_dim and style_dim must be positive");
  require(feature_dim >= style_dim, "feature_dim must be >= style_dim");
  require(style_dim % 2 == 0 && feature_dim % (style_dim / 2) == 0,
          "style_dim must be even and style_dim/2 must divide feature_dim");
  require(grid_h * grid_w >= 2, "grids need at least two cells");
  require(edge_len_min > 0.0 && edge_len_max >= edge_len_min, "edge_len_range must be positive and ordered");
  require(dominant_fraction > 0.0 && dominant_fraction < 1.0, "dominant_fraction must be in (0,1)");
  require(jitter >= 0.0 && appearance_noise >= 0.0, "noise amplitudes must be non-negative");
}

std::string WorldSpec::class_name(int class_id) const {
  if (class_id == num_classes + 1) return "mask";
  if (class_id < 1 || class_id > num_classes) throw Error("unknown_class", "class id out of range");
  auto idx = static_cast<std::size_t>(class_id - 1);
  if (idx < class_vocab.size()) return class_vocab[idx];
  if (idx < kDefaultClassNames.size()) return kDefaultClassNames[idx];
  return "class" + std::to_string(class_id);
}

std::string Environment::class_token(int class_id) const {
  if (class_id == num_classes + 1) return "mask";
  if (class_id < 1 || class_id > num_classes) throw Error("unknown_class", "class id out of range");
  return class_names[static_cast<std::size_t>(class_id - 1)];
}

std::vector<std::pair<NodeId, double>> Environment::neighbors(NodeId n) const {
  std::vector<std::pair<NodeId, double>> out;
  for (const auto& e : edges) {
    if (e.a == n) out.emplace_back(e.b, e.length);
    if (e.b == n) out.emplace_back(e.a, e.length);
  }
  std::sort(out.begin(), out.end());
  return out;
}

const Environment& World::env(const std::string& id) const {
  for (const auto& e : environments) {
    if (e.env_id == id) return e;
  }
  throw Error("unknown_env", "no environment '" + id + "'");
}

std::string env_id_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "env_%03d", index);
  return buf;
}

GraphDistances::GraphDistances(const Environment& env) : n_(env.num_nodes()) {
  adjacency_.resize(static_cast<std::size_t>(n_));
  for (NodeId i = 0; i < n_; ++i) adjacency_[static_cast<std::size_t>(i)] = env.neighbors(i);
  dist_.assign(static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_),
               std::numeric_limits<double>::infinity());
  using Item = std::pair<double, NodeId>;
  for (NodeId src = 0; src < n_; ++src) {
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist_[index(src, src)] = 0.0;
    queue.emplace(0.0, src);
    while (!queue.empty()) {
      auto [d, u] = queue.top();
      queue.pop();
      if (d > dist_[index(src, u)]) continue;
      for (auto [v, w] : adjacency_[static_cast<std::size_t>(u)]) {
        double nd = d + w;
        if (nd < dist_[index(src, v)]) {
          dist_[index(src, v)] = nd;
          queue.emplace(nd, v);
        }
      }
    }
  }
  // Summation order differs per source; make the table exactly symmetric.
  for (NodeId a = 0; a < n_; ++a) {
    for (NodeId b = a + 1; b < n_; ++b) {
      const double d = std::min(dist_[index(a, b)], dist_[index(b, a)]);
      dist_[index(a, b)] = d;
      dist_[index(b, a)] = d;
    }
  }
}

NodeId GraphDistances::next_hop(NodeId from, NodeId to) const {
  if (from == to) return from;
  const double total = distance(from, to);
  for (auto [v, w] : adjacency_[static_cast<std::size_t>(from)]) {
    if (std::abs(w + distance(v, to) - total) <= kPathTolerance * std::max(1.0, total)) return v;
  }
  throw Error("unreachable", "no path between nodes");
}

double GraphDistances::edge_length(NodeId a, NodeId b) const {
  if (a < 0 || a >= n_ || b < 0 || b >= n_) throw Error("unknown_node", "node not in environment");
  for (auto [v, w] : adjacency_[static_cast<std::size_t>(a)]) {
    if (v == b) return w;
  }
  throw Error("invalid_trajectory", "consecutive nodes are not adjacent");
}

PathResult GraphDistances::path(NodeId from, NodeId to) const {
  if (from < 0 || from >= n_ || to < 0 || to >= n_) throw Error("unknown_node", "node not in environment");
  if (!std::isfinite(distance(from, to))) throw Error("unreachable", "no path between nodes");
  PathResult r;
  r.path.push_back(from);
  NodeId cur = from;
  while (cur != to) {
    NodeId nxt = next_hop(cur, to);
    for (auto [v, w] : adjacency_[static_cast<std::size_t>(cur)]) {
      if (v == nxt) {
        r.length += w;
        break;
      }
    }
    cur = nxt;
    r.path.push_back(cur);
  }
  return r;
}

PathResult shortest_path(const Environment& env, NodeId a, NodeId b) {
  if (!env.has_node(a) || !env.has_node(b)) throw Error("unknown_node", "node not in environment " + env.env_id);
  return GraphDistances(env).path(a, b);
}

bool is_connected(const Environment& env) {
  if (env.nodes.empty()) return true;
  std::vector<bool> seen(env.nodes.size(), false);
  std::deque<NodeId> frontier{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!frontier.empty()) {
    NodeId u = frontier.front();
    frontier.pop_front();
    for (auto [v, w] : env.neighbors(u)) {
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = true;
        ++count;
        frontier.push_back(v);
      }
    }
  }
  return count == env.nodes.size();
}

std::pair<double, double> direction_between(const Environment& env, NodeId a, NodeId b) {
  const auto& pa = env.nodes[static_cast<std::size_t>(a)].position;
  const auto& pb = env.nodes[static_cast<std::size_t>(b)].position;
  double dx = pb[0] - pa[0], dy = pb[1] - pa[1], dz = pb[2] - pa[2];
  double heading = std::atan2(dx, dy);
  if (heading < 0.0) heading += 2.0 * std::numbers::pi;
  double elevation = std::atan2(dz, std::hypot(dx, dy));
  return {heading, elevation};
}

std::string direction_token(double current_heading, double hop_heading, double hop_elevation) {
  constexpr double kVertical = std::numbers::pi / 9.0;  // 20 degrees
  if (hop_elevation > kVertical) return "up";
  if (hop_elevation < -kVertical) return "down";
  double delta = wrap_angle(hop_heading - current_heading);
  if (std::abs(delta) <= std::numbers::pi / 4.0) return "straight";
  return delta > 0.0 ? "right" : "left";
}

int modal_class(const std::vector<int>& grid) {
  std::map<int, int> counts;
  for (int c : grid) ++counts[c];
  int best = 0, best_count = -1;
  for (auto [c, n] : counts) {
    if (n > best_count) {
      best = c;
      best_count = n;
    }
  }
  return best;
}

std::vector<std::string> oracle_instruction(const Environment& env, const std::vector<NodeId>& path) {
  if (path.empty()) throw Error("invalid_path", "empty path");
  for (NodeId n : path) {
    if (!env.has_node(n)) throw Error("invalid_path", "path node not in environment");
  }
  std::vector<std::string> tokens;
  double heading = 0.0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    NodeId u = path[i], v = path[i + 1];
    auto nb = env.neighbors(u);
    bool adjacent = std::any_of(nb.begin(), nb.end(), [v](const auto& p) { return p.first == v; });
    if (!adjacent) throw Error("invalid_path", "path is not connected in the graph");
    auto [theta, phi] = direction_between(env, u, v);
    tokens.push_back(direction_token(heading, theta, phi));
    int view = nearest_view_index(theta, phi);
    const auto& grid = env.panoramas[static_cast<std::size_t>(u)].views[static_cast<std::size_t>(view)].grid;
    tokens.push_back(env.class_token(modal_class(grid)));
    heading = theta;
  }
  tokens.emplace_back("stop");
  return tokens;
}

std::vector<std::string> select_holdout_envs(const std::vector<std::string>& env_ids, double fraction,
                                             std::uint64_t seed) {
  std::vector<std::string> ids = env_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  auto n_unseen = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
  if (n_unseen == 0 || n_unseen >= ids.size()) {
    throw Error("invalid_holdout", "holdout fraction leaves no environments on one side of the split");
  }
  Rng rng(derive_seed(seed, hash_tag("holdout")));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(n_unseen);
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

Environment generate_environment(const WorldSpec& spec, const RenderContext& ctx, int index, bool shifted,
                                 const Vec& shift_direction, std::uint64_t seed) {
  Environment env;
  env.env_id = env_id_for(index);
  env.num_classes = spec.num_classes;
  env.grid_h = spec.grid_h;
  env.grid_w = spec.grid_w;
  env.feature_dim = spec.feature_dim;
  for (int c = 1; c <= spec.num_classes; ++c) env.class_names.push_back(spec.class_name(c));

  Rng rng(derive_seed(seed, hash_tag("geometry"), static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> length(spec.edge_len_min, spec.edge_len_max);

  auto dist3 = [](const std::array<double, 3>& p, const std::array<double, 3>& q) {
    return std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2]));
  };

  // Random tree growth keeps the graph connected with every tree edge in range.
  env.nodes.push_back({0, {0.0, 0.0, 0.0}});
  std::set<std::pair<NodeId, NodeId>> linked;
  for (int i = 1; i < spec.nodes_per_env; ++i) {
    std::array<double, 3> pos{};
    NodeId parent = 0;
    for (int attempt = 0; attempt < 200; ++attempt) {
      parent = static_cast<NodeId>(rng() % static_cast<std::uint64_t>(i));
      double len = length(rng);
      double dz = 0.0;
      if (unit(rng) < spec.stair_prob) {
        dz = (unit(rng) < 0.5 ? -1.0 : 1.0) * std::min(2.5, 0.7 * len);
      } else {
        dz = 0.2 * (unit(rng) - 0.5);
      }
      double horizontal = std::sqrt(std::max(len * len - dz * dz, 1e-6));
      double a = angle(rng);
      const auto& pp = env.nodes[static_cast<std::size_t>(parent)].position;
      pos = {pp[0] + horizontal * std::sin(a), pp[1] + horizontal * std::cos(a), pp[2] + dz};
      bool clear = true;
      for (const auto& n : env.nodes) {
        if (dist3(n.position, pos) < 0.8 * spec.edge_len_min) clear = false;
      }
      if (clear) break;
    }
    env.nodes.push_back({i, pos});
    env.edges.push_back({parent, i, dist3(env.nodes[static_cast<std::size_t>(parent)].position, pos)});
    linked.insert({parent, i});
  }
  for (int i = 0; i < spec.nodes_per_env; ++i) {
    for (int j = i + 1; j < spec.nodes_per_env; ++j) {
      if (linked.count({i, j})) continue;
      double d = dist3(env.nodes[static_cast<std::size_t>(i)].position, env.nodes[static_cast<std::size_t>(j)].position);
      bool in_range = d >= spec.edge_len_min && d <= spec.edge_len_max;
      if (in_range && unit(rng) < spec.extra_edge_prob) {
        env.edges.push_back({i, j, d});
        linked.insert({i, j});
      }
    }
  }

  const double noise_scale = shifted ? spec.unseen_appearance_scale : 1.0;
  env.appearance_table =
      ctx.appearance.sample(derive_seed(seed, hash_tag("appearance"), static_cast<std::uint64_t>(index)), noise_scale);

  Rng style_rng(derive_seed(seed, hash_tag("base_style"), static_cast<std::uint64_t>(index)));
  env.base_style = normal_vector(style_rng, static_cast<std::size_t>(spec.style_dim), spec.base_style_scale);
  if (shifted) {
    for (std::size_t k = 0; k < env.base_style.size(); ++k) {
      env.base_style[k] += spec.unseen_style_shift * shift_direction[k];
    }
  }
  const StyleEmbedding base{env.base_style};

  const int cells = spec.grid_h * spec.grid_w;
  std::uniform_int_distribution<int> any_class(1, spec.num_classes);
  for (int n = 0; n < spec.nodes_per_env; ++n) {
    Panorama pano;
    pano.viewpoint = n;
    Rng grid_rng(derive_seed(seed, hash_tag("grid"), static_cast<std::uint64_t>(index), static_cast<std::uint64_t>(n)));
    for (int k = 0; k < kViewsPerPanorama; ++k) {
      DiscretizedView view;
      view.heading = view_heading(k);
      view.elevation = view_elevation(k);
      view.orientation = orientation_feature(view.heading, view.elevation);
      int dominant = any_class(grid_rng);
      view.grid.resize(static_cast<std::size_t>(cells));
      for (auto& c : view.grid) c = unit(grid_rng) < spec.dominant_fraction ? dominant : any_class(grid_rng);
      view.jitter_seed = derive_seed(seed, hash_tag("jitter"), static_cast<std::uint64_t>(index),
                                     static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(k));
      view.feature = render_view(view.grid, env.appearance_table, &base, ctx.modulator, view.jitter_seed, ctx.jitter);
      view.style = ctx.encoder.encode(view.feature).values;
      pano.views.push_back(std::move(view));
    }
    env.panoramas.push_back(std::move(pano));
  }

  // Every environment must use at least two distinct classes.
  std::set<int> used;
  for (const auto& p : env.panoramas) {
    for (const auto& v : p.views) used.insert(v.grid.begin(), v.grid.end());
  }
  if (used.size() < 2) {
    auto& grid = env.panoramas[0].views[0].grid;
    grid[0] = grid[0] == 1 ? 2 : 1;
    auto& view = env.panoramas[0].views[0];
    view.feature = render_view(view.grid, env.appearance_table, &base, ctx.modulator, view.jitter_seed, ctx.jitter);
    view.style = ctx.encoder.encode(view.feature).values;
  }
  return env;
}

}  // namespace

World generate_world(const WorldSpec& spec, std::uint64_t seed) {
  spec.validate();
  World world;
  world.spec = spec;
  world.seed = seed;
  const RenderContext ctx = make_render_context(spec, seed);

  std::vector<std::string> ids;
  for (int i = 0; i < spec.num_envs; ++i) ids.push_back(env_id_for(i));
  if (spec.num_envs >= 2) {
    auto n_unseen = std::llround(spec.holdout_fraction * spec.num_envs);
    if (n_unseen > 0 && n_unseen < spec.num_envs) world.holdout_envs = select_holdout_envs(ids, spec.holdout_fraction, seed);
  }

  Rng dir_rng(derive_seed(seed, hash_tag("shift_direction")));
  Vec shift_direction = normal_vector(dir_rng, static_cast<std::size_t>(spec.style_dim));
  double norm = 0.0;
  for (double x : shift_direction) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : shift_direction) x /= norm;

  for (int i = 0; i < spec.num_envs; ++i) {
    bool shifted = std::binary_search(world.holdout_envs.begin(), world.holdout_envs.end(), ids[static_cast<std::size_t>(i)]);
    world.environments.push_back(generate_environment(spec, ctx, i, shifted, shift_direction, seed));
  }
  return world;
}

std::vector<Episode> sample_episodes(const std::vector<const Environment*>& envs, int n,
                                     std::pair<int, int> len_range, std::uint64_t seed, const std::string& id_prefix) {
  if (n < 0) throw Error("invalid_argument", "episode count must be non-negative");
  if (len_range.first < 0 || len_range.second < len_range.first) {
    throw Error("infeasible_len_range", "len_range must satisfy 0 <= lo <= hi");
  }
  std::vector<Episode> out;
  if (n == 0) return out;
  if (envs.empty()) throw Error("invalid_argument", "no environments to sample from");
  std::vector<GraphDistances> distances;
  distances.reserve(envs.size());
  for (const auto* e : envs) distances.emplace_back(*e);

  Rng rng(derive_seed(seed, hash_tag("episodes")));
  constexpr int kMaxRejections = 20000;
  for (int i = 0; i < n; ++i) {
    int rejections = 0;
    while (true) {
      auto e = static_cast<std::size_t>(rng() % envs.size());
      const Environment& env = *envs[e];
      auto a = static_cast<NodeId>(rng() % static_cast<std::uint64_t>(env.num_nodes()));
      auto b = static_cast<NodeId>(rng() % static_cast<std::uint64_t>(env.num_nodes()));
      PathResult p = distances[e].path(a, b);
      int hops = static_cast<int>(p.path.size()) - 1;
      if (hops >= len_range.first && hops <= len_range.second) {
        Episode ep;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s_%06d", id_prefix.c_str(), i);
        ep.episode_id = buf;
        ep.env_id = env.env_id;
        ep.path = std::move(p.path);
        ep.instruction = oracle_instruction(env, ep.path);
        out.push_back(std::move(ep));
        break;
      }
      if (++rejections >= kMaxRejections) {
        throw Error("infeasible_len_range", "no path with the requested hop count after bounded rejection sampling");
      }
    }
  }
  return out;
}

DatasetSplit split_dataset(const std::vector<Episode>& episodes, double env_holdout_fraction, std::uint64_t seed,
                           double val_seen_fraction) {
  std::vector<std::string> ids;
  for (const auto& ep : episodes) ids.push_back(ep.env_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) throw Error("invalid_split", "need at least two environments to split");

  DatasetSplit split;
  split.unseen_envs = select_holdout_envs(ids, env_holdout_fraction, seed);
  for (const auto& id : ids) {
    if (!std::binary_search(split.unseen_envs.begin(), split.unseen_envs.end(), id)) split.seen_envs.push_back(id);
  }

  std::vector<std::size_t> seen_idx;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    if (std::binary_search(split.unseen_envs.begin(), split.unseen_envs.end(), episodes[i].env_id)) {
      split.val_unseen.push_back(episodes[i]);
    } else {
      seen_idx.push_back(i);
    }
  }
  Rng rng(derive_seed(seed, hash_tag("val_seen")));
  std::vector<std::size_t> shuffled = seen_idx;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(val_seen_fraction * static_cast<double>(seen_idx.size())));
  n_val = std::min(n_val, seen_idx.size());
  std::vector<std::size_t> val_idx(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(val_idx.begin(), val_idx.end());
  for (std::size_t i : seen_idx) {
    if (std::binary_search(val_idx.begin(), val_idx.end(), i)) {
      split.val_seen.push_back(episodes[i]);
    } else {
      split.train.push_back(episodes[i]);
    }
  }
  return split;
}

}  // namespace envedit
