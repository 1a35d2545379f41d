#pragma once

#include <cstdint>
#include <vector>

#include "envedit/render.hpp"
#include "envedit/world.hpp"

namespace envedit {

inline constexpr double kPriorJitter = 1e-9;

// Multivariate normal over style embeddings.
struct StylePrior {
  Vec mean;
  Vec covariance;  // dim x dim, row-major
  Vec cholesky;    // lower factor of covariance (+ jitter when rank-deficient)

  int dim() const { return static_cast<int>(mean.size()); }
  StyleEmbedding sample(Rng& rng) const;
};

struct EditConfig {
  Variant variant = Variant::kStyleTransfer;
  StyleScope style_scope = StyleScope::kPerPanorama;
  int mask_count = 1;
  std::uint64_t seed = 0;

  // Rejects mask counts outside 1..C-1 for masked variants; non-masked variants ignore it.
  void validate(int num_classes) const;
};

// Stand-in for a painting-style corpus: clustered random embeddings.
std::vector<StyleEmbedding> synthetic_style_library(int dim, int count, std::uint64_t seed);

// Sample mean and population covariance of the library.
StylePrior fit_style_prior(const std::vector<StyleEmbedding>& library);

// styles[node][view]
using StyleAssignment = std::vector<std::vector<StyleEmbedding>>;

StyleAssignment assign_styles(const Environment& env, const StylePrior& prior, StyleScope scope, std::uint64_t seed);
// The style record carried by each view of an environment.
StyleAssignment style_assignment_of(const Environment& env);

Environment edit_style_transfer(const Environment& env, const StylePrior& prior, StyleScope scope,
                                std::uint64_t seed, const RenderContext& ctx);

struct MaskResult {
  std::vector<std::vector<std::vector<int>>> grids;  // [node][view] -> grid
  std::vector<int> masked_class_ids;
};

MaskResult mask_semantics(const Environment& env, int k, std::uint64_t seed);

enum class SynthesisStyle { kOriginal, kFixedZero };

Environment edit_synthesis(const Environment& env, SynthesisStyle style_mode, int k, std::uint64_t seed,
                           const RenderContext& ctx);

// Dispatches an EditConfig to the matching editor.
Environment apply_edit(const Environment& env, const EditConfig& config, const StylePrior& prior,
                       const RenderContext& ctx);

}  // namespace envedit
