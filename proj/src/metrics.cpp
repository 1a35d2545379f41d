#include "envedit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

namespace envedit {

NavigationOutcome tl_ne_sr(const GraphDistances& distances, const std::vector<NodeId>& trajectory, NodeId goal,
                           double success_radius) {
  if (trajectory.empty()) throw Error("invalid_trajectory", "empty trajectory");
  NavigationOutcome out;
  for (std::size_t i = 0; i + 1 < trajectory.size(); ++i) {
    out.trajectory_length += distances.edge_length(trajectory[i], trajectory[i + 1]);
  }
  out.navigation_error = distances.distance(trajectory.back(), goal);
  out.success = out.navigation_error <= success_radius ? 1.0 : 0.0;
  return out;
}

NavigationOutcome tl_ne_sr(const Environment& env, const std::vector<NodeId>& trajectory, NodeId goal,
                           double success_radius) {
  return tl_ne_sr(GraphDistances(env), trajectory, goal, success_radius);
}

double spl(double success, double shortest_length, double taken_length) {
  if (shortest_length < 0.0 || taken_length < 0.0) throw Error("invalid_argument", "path lengths must be non-negative");
  if (shortest_length == 0.0) return success;
  return success * shortest_length / std::max(taken_length, shortest_length);
}

double dtw(const GraphDistances& distances, const std::vector<NodeId>& predicted, const std::vector<NodeId>& reference) {
  if (predicted.empty() || reference.empty()) throw Error("invalid_argument", "dtw needs non-empty paths");
  const std::size_t n = predicted.size(), m = reference.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> table((n + 1) * (m + 1), inf);
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  table[at(0, 0)] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      double best = std::min({table[at(i - 1, j)], table[at(i, j - 1)], table[at(i - 1, j - 1)]});
      table[at(i, j)] = distances.distance(predicted[i - 1], reference[j - 1]) + best;
    }
  }
  return table[at(n, m)];
}

double ndtw(double dtw_value, std::size_t reference_size, double threshold) {
  if (reference_size == 0) throw Error("invalid_argument", "reference path must be non-empty");
  return std::exp(-dtw_value / (static_cast<double>(reference_size) * threshold));
}

double sdtw(double success, double ndtw_value) { return success * ndtw_value; }

MetricsRow score_episode(const GraphDistances& distances, const Episode& episode, const std::vector<NodeId>& trajectory,
                         double success_radius) {
  MetricsRow row;
  row.episode_id = episode.episode_id;
  row.env_id = episode.env_id;
  auto outcome = tl_ne_sr(distances, trajectory, episode.goal(), success_radius);
  row.tl = outcome.trajectory_length;
  row.ne = outcome.navigation_error;
  row.sr = outcome.success;
  row.spl = spl(row.sr, distances.distance(episode.start(), episode.goal()), row.tl);
  row.ndtw = ndtw(dtw(distances, trajectory, episode.path), episode.path.size(), success_radius);
  row.sdtw = sdtw(row.sr, row.ndtw);
  return row;
}

std::vector<AggregateRow> aggregate(const std::vector<MetricsRow>& rows, GroupBy group_by) {
  if (rows.empty()) throw Error("invalid_argument", "cannot aggregate zero rows");
  std::map<std::string, AggregateRow> groups;
  for (const auto& r : rows) {
    const std::string key = group_by == GroupBy::kOverall ? "overall" : r.env_id;
    auto& g = groups[key];
    g.group = key;
    ++g.count;
    g.tl += r.tl;
    g.ne += r.ne;
    g.sr += r.sr;
    g.spl += r.spl;
    g.ndtw += r.ndtw;
    g.sdtw += r.sdtw;
  }
  std::vector<AggregateRow> out;
  for (auto& [key, g] : groups) {
    const auto n = static_cast<double>(g.count);
    g.tl /= n;
    g.ne /= n;
    g.sr = 100.0 * g.sr / n;
    g.spl = 100.0 * g.spl / n;
    g.ndtw /= n;
    g.sdtw /= n;
    out.push_back(g);
  }
  return out;
}

MetricsReport MetricsReport::from_rows(std::vector<MetricsRow> rows) {
  MetricsReport report;
  report.rows = std::move(rows);
  report.overall = aggregate(report.rows, GroupBy::kOverall).front();
  report.per_env = aggregate(report.rows, GroupBy::kEnvironment);
  return report;
}

namespace {

std::string fmt(double x, const char* spec = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, x);
  return buf;
}

nlohmann::ordered_json aggregate_json(const AggregateRow& a) {
  nlohmann::ordered_json j;
  j["group"] = a.group;
  j["count"] = a.count;
  j["TL"] = a.tl;
  j["NE"] = a.ne;
  j["SR"] = a.sr;
  j["SPL"] = a.spl;
  j["nDTW"] = a.ndtw;
  j["sDTW"] = a.sdtw;
  return j;
}

}  // namespace

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "episode_id,env_id,TL,NE,SR,SPL,nDTW,sDTW\n";
  for (const auto& r : rows) {
    out << r.episode_id << ',' << r.env_id << ',' << fmt(r.tl) << ',' << fmt(r.ne) << ',' << fmt(r.sr) << ','
        << fmt(r.spl) << ',' << fmt(r.ndtw) << ',' << fmt(r.sdtw) << '\n';
  }
  return out.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["episode_id"] = r.episode_id;
    row["env_id"] = r.env_id;
    row["TL"] = r.tl;
    row["NE"] = r.ne;
    row["SR"] = r.sr;
    row["SPL"] = r.spl;
    row["nDTW"] = r.ndtw;
    row["sDTW"] = r.sdtw;
    j["rows"].push_back(row);
  }
  j["aggregates"]["overall"] = aggregate_json(overall);
  j["aggregates"]["per_env"] = nlohmann::ordered_json::array();
  for (const auto& a : per_env) j["aggregates"]["per_env"].push_back(aggregate_json(a));
  return j.dump(2) + "\n";
}

std::string MetricsReport::to_table() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %6s %8s %8s %7s %7s %7s %7s\n", "group", "n", "TL", "NE", "SR", "SPL",
                "nDTW", "sDTW");
  out << line;
  auto emit = [&](const AggregateRow& a) {
    std::snprintf(line, sizeof(line), "%-10s %6zu %8.3f %8.3f %7.1f %7.1f %7.3f %7.3f\n", a.group.c_str(), a.count,
                  a.tl, a.ne, a.sr, a.spl, a.ndtw, a.sdtw);
    out << line;
  };
  for (const auto& a : per_env) emit(a);
  emit(overall);
  return out.str();
}

}  // namespace envedit
