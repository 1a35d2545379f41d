#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "envedit/render.hpp"
#include "envedit/world.hpp"

namespace envedit::testing {

inline WorldSpec small_spec(int num_envs = 4, int nodes = 6, int classes = 6) {
  WorldSpec spec;
  spec.num_envs = num_envs;
  spec.nodes_per_env = nodes;
  spec.num_classes = classes;
  spec.feature_dim = 12;
  spec.style_dim = 4;
  spec.grid_h = 3;
  spec.grid_w = 3;
  return spec;
}

// Hand-built environment: positions and edges given, every view a uniform grid of
// `fill` unless overridden, features rendered with the context at zero base style.
inline Environment hand_env(const std::vector<std::array<double, 3>>& positions,
                            const std::vector<std::pair<int, int>>& links, const RenderContext& ctx,
                            int num_classes, int grid_cells, int fill = 1) {
  Environment env;
  env.env_id = "env_hand";
  env.num_classes = num_classes;
  env.grid_h = 1;
  env.grid_w = grid_cells;
  env.feature_dim = ctx.modulator.feature_dim;
  for (int c = 1; c <= num_classes; ++c) env.class_names.push_back("class" + std::to_string(c));
  for (std::size_t i = 0; i < positions.size(); ++i) env.nodes.push_back({static_cast<NodeId>(i), positions[i]});
  for (auto [a, b] : links) {
    const auto& p = positions[static_cast<std::size_t>(a)];
    const auto& q = positions[static_cast<std::size_t>(b)];
    env.edges.push_back({a, b, std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                         (p[2] - q[2]) * (p[2] - q[2]))});
  }
  env.appearance_table = ctx.appearance.sample(17);
  env.base_style = Vec(static_cast<std::size_t>(ctx.modulator.style_dim), 0.0);
  const StyleEmbedding base{env.base_style};
  for (std::size_t n = 0; n < positions.size(); ++n) {
    Panorama pano;
    pano.viewpoint = static_cast<NodeId>(n);
    for (int k = 0; k < kViewsPerPanorama; ++k) {
      DiscretizedView v;
      v.heading = view_heading(k);
      v.elevation = view_elevation(k);
      v.orientation = orientation_feature(v.heading, v.elevation);
      v.grid.assign(static_cast<std::size_t>(grid_cells), fill);
      v.jitter_seed = n * 100 + static_cast<std::uint64_t>(k);
      v.feature = render_view(v.grid, env.appearance_table, &base, ctx.modulator, v.jitter_seed, ctx.jitter);
      v.style = ctx.encoder.encode(v.feature).values;
      pano.views.push_back(std::move(v));
    }
    env.panoramas.push_back(std::move(pano));
  }
  return env;
}

inline void rerender(Environment& env, const RenderContext& ctx) {
  const StyleEmbedding base{env.base_style};
  for (auto& pano : env.panoramas) {
    for (auto& v : pano.views) {
      v.feature = render_view(v.grid, env.appearance_table, &base, ctx.modulator, v.jitter_seed, ctx.jitter);
      v.style = ctx.encoder.encode(v.feature).values;
    }
  }
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)}); }

}  // namespace envedit::testing
