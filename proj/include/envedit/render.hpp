#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "envedit/common.hpp"
#include "envedit/world.hpp"

namespace envedit {

struct StyleEmbedding {
  Vec values;

  std::size_t dim() const { return values.size(); }
  bool operator==(const StyleEmbedding&) const = default;
  static StyleEmbedding zeros(int dim) { return {Vec(static_cast<std::size_t>(dim), 0.0)}; }
};

std::array<double, 4> orientation_feature(double heading, double elevation);

double view_heading(int view_index);
double view_elevation(int view_index);
// Index of the view whose direction is angularly nearest (heading, elevation); ties go low.
int nearest_view_index(double heading, double elevation);

// The two fully-connected maps producing (gamma, beta) from a style embedding.
// Biases are 1 and 0 so the zero style is a pure standardization.
struct StyleModulator {
  int feature_dim = 0;
  int style_dim = 0;
  Vec gamma_weight;  // feature_dim x style_dim, row-major
  Vec gamma_bias;
  Vec beta_weight;
  Vec beta_bias;

  static StyleModulator seeded(int feature_dim, int style_dim, double scale, std::uint64_t seed);
  Vec gamma(const StyleEmbedding& s) const;
  Vec beta(const StyleEmbedding& s) const;
};

inline constexpr double kInstanceNormEpsilon = 1e-8;

// x_out = gamma * (x_in - mean) / std + beta, population std, epsilon-guarded when degenerate.
Vec conditional_instance_norm(std::span<const double> x_in, std::span<const double> gamma,
                              std::span<const double> beta);
Vec conditional_instance_norm(std::span<const double> x_in, const StyleEmbedding& style,
                              const StyleModulator& modulator);

// Maps a visual feature to a style embedding through its per-channel-group (mean, std)
// statistics followed by an affine projection.
struct StyleEncoder {
  int feature_dim = 0;
  int style_dim = 0;
  int groups = 0;
  Vec weight;  // style_dim x (2 * groups), row-major
  Vec bias;

  static StyleEncoder seeded(int feature_dim, int style_dim, std::uint64_t seed);
  int group_size() const { return feature_dim / groups; }
  Vec statistics(std::span<const double> v) const;
  StyleEmbedding encode(std::span<const double> v) const;
};

using AppearanceTable = std::map<int, Vec>;

// Class prototypes shared across a world; environments perturb them.
struct AppearanceModel {
  int feature_dim = 0;
  std::map<int, Vec> prototypes;
  double noise = 0.35;

  static AppearanceModel seeded(int num_classes, int feature_dim, double noise, std::uint64_t seed);
  AppearanceTable sample(std::uint64_t seed, double noise_scale = 1.0) const;
  Vec sample_mask_vector(std::uint64_t seed) const;
};

// Everything a world needs to (re-)render views; a pure function of (spec, seed).
struct RenderContext {
  StyleModulator modulator;
  StyleEncoder encoder;
  AppearanceModel appearance;
  double jitter = 0.05;
};

RenderContext make_render_context(const WorldSpec& spec, std::uint64_t seed);

// Mean over cells of the class appearance vector plus a seeded per-cell jitter.
Vec raw_view_feature(std::span<const int> grid, const AppearanceTable& table, std::uint64_t jitter_seed,
                     double jitter);
// Rendered feature; a null style leaves the raw feature unmodulated.
Vec render_view(std::span<const int> grid, const AppearanceTable& table, const StyleEmbedding* style,
                const StyleModulator& modulator, std::uint64_t jitter_seed, double jitter);

// f = [v ; o]
struct ViewRepresentation {
  Vec f;
  int feature_dim = 0;

  std::span<const double> visual() const { return {f.data(), static_cast<std::size_t>(feature_dim)}; }
  std::span<const double> orientation() const {
    return {f.data() + feature_dim, static_cast<std::size_t>(kOrientationDim)};
  }
  static ViewRepresentation of(const DiscretizedView& view);
};

struct Candidate {
  NodeId target = 0;
  int view_index = 0;
  ViewRepresentation f;
};

// One candidate per neighbor, ordered by node id; STOP is the implicit index size().
std::vector<Candidate> candidates(const Environment& env, NodeId node);

}  // namespace envedit
