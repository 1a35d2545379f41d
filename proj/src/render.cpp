#include "envedit/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace envedit {

std::array<double, 4> orientation_feature(double heading, double elevation) {
  return {std::cos(heading), std::sin(heading), std::cos(elevation), std::sin(elevation)};
}

double view_heading(int view_index) {
  return static_cast<double>(view_index % kNumHeadings) * (std::numbers::pi / 6.0);
}

double view_elevation(int view_index) {
  return static_cast<double>(view_index / kNumHeadings - 1) * (std::numbers::pi / 6.0);
}

int nearest_view_index(double heading, double elevation) {
  auto unit = [](double h, double e) {
    return std::array<double, 3>{std::sin(h) * std::cos(e), std::cos(h) * std::cos(e), std::sin(e)};
  };
  const auto target = unit(heading, elevation);
  int best = 0;
  double best_dot = -2.0;
  for (int k = 0; k < kViewsPerPanorama; ++k) {
    auto d = unit(view_heading(k), view_elevation(k));
    double dot = d[0] * target[0] + d[1] * target[1] + d[2] * target[2];
    if (dot > best_dot + 1e-12) {
      best_dot = dot;
      best = k;
    }
  }
  return best;
}

StyleModulator StyleModulator::seeded(int feature_dim, int style_dim, double scale, std::uint64_t seed) {
  StyleModulator m;
  m.feature_dim = feature_dim;
  m.style_dim = style_dim;
  Rng rng(derive_seed(seed, hash_tag("modulator")));
  const double sd = scale / std::sqrt(static_cast<double>(style_dim));
  const auto n = static_cast<std::size_t>(feature_dim) * static_cast<std::size_t>(style_dim);
  m.gamma_weight = normal_vector(rng, n, sd);
  m.beta_weight = normal_vector(rng, n, sd);
  m.gamma_bias.assign(static_cast<std::size_t>(feature_dim), 1.0);
  m.beta_bias.assign(static_cast<std::size_t>(feature_dim), 0.0);
  return m;
}

namespace {

Vec affine(const Vec& weight, const Vec& bias, std::span<const double> x) {
  const std::size_t rows = bias.size(), cols = x.size();
  Vec out = bias;
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += weight[r * cols + c] * x[c];
    out[r] += acc;
  }
  return out;
}

void check_style(const StyleEmbedding& s, int style_dim) {
  if (static_cast<int>(s.dim()) != style_dim) throw Error("style_dim_mismatch", "style embedding has wrong dimension");
  for (double x : s.values) {
    if (!std::isfinite(x)) throw Error("non_finite_style", "style embedding contains non-finite values");
  }
}

}  // namespace

Vec StyleModulator::gamma(const StyleEmbedding& s) const {
  check_style(s, style_dim);
  return affine(gamma_weight, gamma_bias, s.values);
}

Vec StyleModulator::beta(const StyleEmbedding& s) const {
  check_style(s, style_dim);
  return affine(beta_weight, beta_bias, s.values);
}

Vec conditional_instance_norm(std::span<const double> x_in, std::span<const double> gamma,
                              std::span<const double> beta) {
  if (x_in.empty()) throw Error("invalid_argument", "empty input to instance normalization");
  if (gamma.size() != x_in.size() || beta.size() != x_in.size()) {
    throw Error("invalid_argument", "gamma/beta size must match input size");
  }
  const auto n = static_cast<double>(x_in.size());
  double mean = 0.0;
  for (double x : x_in) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : x_in) var += (x - mean) * (x - mean);
  double sigma = std::sqrt(var / n);
  if (sigma < kInstanceNormEpsilon) sigma += kInstanceNormEpsilon;
  Vec out(x_in.size());
  for (std::size_t i = 0; i < x_in.size(); ++i) out[i] = gamma[i] * (x_in[i] - mean) / sigma + beta[i];
  return out;
}

Vec conditional_instance_norm(std::span<const double> x_in, const StyleEmbedding& style,
                              const StyleModulator& modulator) {
  if (static_cast<int>(x_in.size()) != modulator.feature_dim) {
    throw Error("invalid_argument", "feature size does not match the style modulator");
  }
  return conditional_instance_norm(x_in, modulator.gamma(style), modulator.beta(style));
}

StyleEncoder StyleEncoder::seeded(int feature_dim, int style_dim, std::uint64_t seed) {
  StyleEncoder e;
  e.feature_dim = feature_dim;
  e.style_dim = style_dim;
  e.groups = style_dim / 2;
  if (e.groups <= 0 || feature_dim % e.groups != 0) {
    throw Error("invalid_argument", "style_dim/2 must divide feature_dim");
  }
  Rng rng(derive_seed(seed, hash_tag("style_encoder")));
  e.weight = normal_vector(rng, static_cast<std::size_t>(style_dim) * static_cast<std::size_t>(2 * e.groups),
                           1.0 / std::sqrt(2.0 * e.groups));
  e.bias.assign(static_cast<std::size_t>(style_dim), 0.0);
  return e;
}

Vec StyleEncoder::statistics(std::span<const double> v) const {
  if (static_cast<int>(v.size()) != feature_dim) throw Error("invalid_argument", "feature size mismatch in style encoder");
  const auto gs = static_cast<std::size_t>(group_size());
  Vec stats(static_cast<std::size_t>(2 * groups));
  for (std::size_t g = 0; g < static_cast<std::size_t>(groups); ++g) {
    double mean = 0.0;
    for (std::size_t i = 0; i < gs; ++i) mean += v[g * gs + i];
    mean /= static_cast<double>(gs);
    double var = 0.0;
    for (std::size_t i = 0; i < gs; ++i) var += (v[g * gs + i] - mean) * (v[g * gs + i] - mean);
    var /= static_cast<double>(gs);
    stats[g] = mean;
    stats[static_cast<std::size_t>(groups) + g] = std::sqrt(var + kInstanceNormEpsilon);
  }
  return stats;
}

StyleEmbedding StyleEncoder::encode(std::span<const double> v) const {
  Vec stats = statistics(v);
  return {affine(weight, bias, stats)};
}

AppearanceModel AppearanceModel::seeded(int num_classes, int feature_dim, double noise, std::uint64_t seed) {
  AppearanceModel m;
  m.feature_dim = feature_dim;
  m.noise = noise;
  Rng rng(derive_seed(seed, hash_tag("prototypes")));
  for (int c = 1; c <= num_classes; ++c) m.prototypes[c] = normal_vector(rng, static_cast<std::size_t>(feature_dim));
  return m;
}

AppearanceTable AppearanceModel::sample(std::uint64_t seed, double noise_scale) const {
  Rng rng(seed);
  AppearanceTable table;
  for (const auto& [c, proto] : prototypes) {
    Vec v = normal_vector(rng, proto.size(), noise * noise_scale);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += proto[i];
    table[c] = std::move(v);
  }
  return table;
}

Vec AppearanceModel::sample_mask_vector(std::uint64_t seed) const {
  Rng rng(derive_seed(seed, hash_tag("mask_fill")));
  return normal_vector(rng, static_cast<std::size_t>(feature_dim));
}

RenderContext make_render_context(const WorldSpec& spec, std::uint64_t seed) {
  RenderContext ctx;
  ctx.modulator = StyleModulator::seeded(spec.feature_dim, spec.style_dim, spec.modulator_scale, seed);
  ctx.encoder = StyleEncoder::seeded(spec.feature_dim, spec.style_dim, seed);
  ctx.appearance = AppearanceModel::seeded(spec.num_classes, spec.feature_dim, spec.appearance_noise, seed);
  ctx.jitter = spec.jitter;
  return ctx;
}

Vec raw_view_feature(std::span<const int> grid, const AppearanceTable& table, std::uint64_t jitter_seed,
                     double jitter) {
  if (grid.empty()) throw Error("invalid_argument", "empty semantic grid");
  Vec acc;
  for (std::size_t cell = 0; cell < grid.size(); ++cell) {
    auto it = table.find(grid[cell]);
    if (it == table.end()) throw Error("unknown_class", "class id " + std::to_string(grid[cell]) + " has no appearance");
    const Vec& a = it->second;
    if (acc.empty()) acc.assign(a.size(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) acc[i] += a[i];
    if (jitter > 0.0) {
      double norm = 0.0;
      for (double x : a) norm += x * x;
      const double amp = jitter * std::sqrt(norm / static_cast<double>(a.size()));
      Rng rng(derive_seed(jitter_seed, static_cast<std::uint64_t>(cell)));
      std::normal_distribution<double> z(0.0, amp);
      for (std::size_t i = 0; i < a.size(); ++i) acc[i] += z(rng);
    }
  }
  for (double& x : acc) x /= static_cast<double>(grid.size());
  return acc;
}

Vec render_view(std::span<const int> grid, const AppearanceTable& table, const StyleEmbedding* style,
                const StyleModulator& modulator, std::uint64_t jitter_seed, double jitter) {
  Vec raw = raw_view_feature(grid, table, jitter_seed, jitter);
  if (style == nullptr) return raw;
  return conditional_instance_norm(raw, *style, modulator);
}

ViewRepresentation ViewRepresentation::of(const DiscretizedView& view) {
  ViewRepresentation r;
  r.feature_dim = static_cast<int>(view.feature.size());
  r.f = view.feature;
  r.f.insert(r.f.end(), view.orientation.begin(), view.orientation.end());
  return r;
}

std::vector<Candidate> candidates(const Environment& env, NodeId node) {
  if (!env.has_node(node)) throw Error("unknown_node", "node not in environment " + env.env_id);
  std::vector<Candidate> out;
  for (auto [target, len] : env.neighbors(node)) {
    auto [theta, phi] = direction_between(env, node, target);
    Candidate c;
    c.target = target;
    c.view_index = nearest_view_index(theta, phi);
    c.f = ViewRepresentation::of(env.panoramas[static_cast<std::size_t>(node)].views[static_cast<std::size_t>(c.view_index)]);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace envedit
