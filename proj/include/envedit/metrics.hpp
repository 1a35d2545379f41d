#pragma once

#include <string>
#include <vector>

#include "envedit/world.hpp"

namespace envedit {

inline constexpr double kDefaultSuccessRadius = 3.0;

struct NavigationOutcome {
  double trajectory_length = 0.0;  // TL
  double navigation_error = 0.0;   // NE
  double success = 0.0;            // SR, 0 or 1
};

NavigationOutcome tl_ne_sr(const GraphDistances& distances, const std::vector<NodeId>& trajectory, NodeId goal,
                           double success_radius = kDefaultSuccessRadius);
NavigationOutcome tl_ne_sr(const Environment& env, const std::vector<NodeId>& trajectory, NodeId goal,
                           double success_radius = kDefaultSuccessRadius);

// SR * l / max(p, l); SR when l == 0.
double spl(double success, double shortest_length, double taken_length);

// Boundary-aligned monotone DTW with geodesic node-to-node cost.
double dtw(const GraphDistances& distances, const std::vector<NodeId>& predicted,
           const std::vector<NodeId>& reference);
double ndtw(double dtw_value, std::size_t reference_size, double threshold = kDefaultSuccessRadius);
double sdtw(double success, double ndtw_value);

struct MetricsRow {
  std::string episode_id;
  std::string env_id;
  double tl = 0.0;
  double ne = 0.0;
  double sr = 0.0;
  double spl = 0.0;
  double ndtw = 0.0;
  double sdtw = 0.0;
};

MetricsRow score_episode(const GraphDistances& distances, const Episode& episode,
                         const std::vector<NodeId>& trajectory, double success_radius = kDefaultSuccessRadius);

// Means per group; SR and SPL are percentages.
struct AggregateRow {
  std::string group;
  std::size_t count = 0;
  double tl = 0.0;
  double ne = 0.0;
  double sr = 0.0;
  double spl = 0.0;
  double ndtw = 0.0;
  double sdtw = 0.0;
};

enum class GroupBy { kOverall, kEnvironment };

std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows, GroupBy group_by);

struct MetricsReport {
  std::vector<MetricsRow> rows;
  AggregateRow overall;
  std::vector<AggregateRow> per_env;

  static MetricsReport from_rows(std::vector<MetricsRow> rows);
  std::string to_csv() const;
  std::string to_json() const;
  // Fixed-width summary table; SR/SPL with one decimal.
  std::string to_table() const;
};

}  // namespace envedit
