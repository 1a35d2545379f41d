#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "envedit/common.hpp"

namespace envedit {

// Which (style, appearance, object) components an environment was edited in.
enum class Variant {
  kOriginal,
  kStyleTransfer,       // E_st
  kSynthesis1,          // E_is1
  kSynthesis2,          // E_is2
  kSynthesis1Masked,    // E_is1_m
  kSynthesis2Masked,    // E_is2_m
};

enum class StyleScope { kPerView, kPerPanorama, kPerEnvironment };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
std::string to_string(StyleScope s);
StyleScope style_scope_from_string(const std::string& s);
inline bool is_masked(Variant v) {
  return v == Variant::kSynthesis1Masked || v == Variant::kSynthesis2Masked;
}

struct WorldSpec {
  int num_envs = 12;
  int nodes_per_env = 10;
  int grid_h = 4;
  int grid_w = 4;
  int num_classes = 6;
  int feature_dim = 24;
  int style_dim = 8;
  std::vector<std::string> class_vocab;
  double edge_len_min = 3.5;
  double edge_len_max = 6.0;
  double extra_edge_prob = 0.6;
  double stair_prob = 0.1;
  double dominant_fraction = 0.55;
  // Per-cell jitter amplitude as a fraction of the appearance vector norm.
  double jitter = 0.05;
  double appearance_noise = 0.35;
  double modulator_scale = 0.5;
  double base_style_scale = 0.3;
  // Held-out environments draw styles/appearances from a shifted distribution.
  double holdout_fraction = 0.25;
  double unseen_style_shift = 0.0;
  double unseen_appearance_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  // Class name for ids 1..C; C+1 is the mask class.
  std::string class_name(int class_id) const;
};

struct Node {
  NodeId id = 0;
  std::array<double, 3> position{};
};

struct Edge {
  NodeId a = 0;
  NodeId b = 0;
  double length = 0.0;
};

struct DiscretizedView {
  double heading = 0.0;
  double elevation = 0.0;
  std::vector<int> grid;  // row-major class ids
  Vec feature;            // rendered visual feature v (D floats)
  std::array<double, 4> orientation{};
  Vec style;  // style embedding the view was rendered/perceived with
  std::uint64_t jitter_seed = 0;
};

struct Panorama {
  NodeId viewpoint = 0;
  std::vector<DiscretizedView> views;  // elevation-major: index = e * 12 + h
};

struct EditRecord {
  Variant variant = Variant::kOriginal;
  StyleScope style_scope = StyleScope::kPerPanorama;
  int mask_count = 0;
  std::uint64_t seed = 0;
  std::vector<int> masked_class_ids;
};

struct Environment {
  std::string env_id;
  int num_classes = 0;
  int grid_h = 0;
  int grid_w = 0;
  int feature_dim = 0;
  std::vector<std::string> class_names;  // names of ids 1..C
  std::vector<Node> nodes;  // node id == index
  std::vector<Edge> edges;
  std::vector<Panorama> panoramas;  // indexed by node id
  std::map<int, Vec> appearance_table;
  Vec base_style;
  Variant provenance = Variant::kOriginal;
  std::optional<EditRecord> edit;

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  bool has_node(NodeId n) const { return n >= 0 && n < num_nodes(); }
  std::string class_token(int class_id) const;
  // Neighbors sorted by node id, with edge lengths.
  std::vector<std::pair<NodeId, double>> neighbors(NodeId n) const;
};

struct Episode {
  std::string episode_id;
  std::string env_id;
  std::vector<NodeId> path;
  std::vector<std::string> instruction;
  bool synthetic = false;

  NodeId start() const { return path.front(); }
  NodeId goal() const { return path.back(); }
  int hops() const { return static_cast<int>(path.size()) - 1; }
};

struct DatasetSplit {
  std::vector<Episode> train;
  std::vector<Episode> val_seen;
  std::vector<Episode> val_unseen;
  std::vector<std::string> seen_envs;
  std::vector<std::string> unseen_envs;
};

struct PathResult {
  std::vector<NodeId> path;
  double length = 0.0;
};

// All-pairs geodesic distances plus deterministic next-hop queries.
class GraphDistances {
 public:
  explicit GraphDistances(const Environment& env);

  double distance(NodeId a, NodeId b) const { return dist_[index(a, b)]; }
  // First hop of the lexicographically smallest shortest path from `from` to `to`.
  NodeId next_hop(NodeId from, NodeId to) const;
  PathResult path(NodeId from, NodeId to) const;
  // Length of the direct edge a-b; throws when the nodes are not adjacent.
  double edge_length(NodeId a, NodeId b) const;
  int num_nodes() const { return n_; }

 private:
  std::size_t index(NodeId a, NodeId b) const {
    return static_cast<std::size_t>(a) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(b);
  }

  int n_ = 0;
  Vec dist_;
  std::vector<std::vector<std::pair<NodeId, double>>> adjacency_;
};

struct World {
  WorldSpec spec;
  std::uint64_t seed = 0;
  std::vector<Environment> environments;
  std::vector<std::string> holdout_envs;

  const Environment& env(const std::string& id) const;
};

// Sorted env ids chosen for the unseen split; shared by generation and splitting.
std::vector<std::string> select_holdout_envs(const std::vector<std::string>& env_ids,
                                             double fraction, std::uint64_t seed);

std::string env_id_for(int index);

World generate_world(const WorldSpec& spec, std::uint64_t seed);
PathResult shortest_path(const Environment& env, NodeId a, NodeId b);
std::vector<std::string> oracle_instruction(const Environment& env, const std::vector<NodeId>& path);
std::vector<Episode> sample_episodes(const std::vector<const Environment*>& envs, int n,
                                     std::pair<int, int> len_range, std::uint64_t seed,
                                     const std::string& id_prefix = "ep");
DatasetSplit split_dataset(const std::vector<Episode>& episodes, double env_holdout_fraction,
                           std::uint64_t seed, double val_seen_fraction = 0.15);

// Direction (heading from north toward east, elevation) from node a toward node b.
std::pair<double, double> direction_between(const Environment& env, NodeId a, NodeId b);
// Token describing a hop relative to the current heading.
std::string direction_token(double current_heading, double hop_heading, double hop_elevation);
int modal_class(const std::vector<int>& grid);
bool is_connected(const Environment& env);

}  // namespace envedit
