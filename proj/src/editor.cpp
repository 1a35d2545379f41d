#include "envedit/editor.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <numeric>

namespace envedit {

StyleEmbedding StylePrior::sample(Rng& rng) const {
  const auto d = static_cast<std::size_t>(dim());
  Vec z = normal_vector(rng, d);
  Vec out = mean;
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c <= r; ++c) out[r] += cholesky[r * d + c] * z[c];
  }
  return {out};
}

void EditConfig::validate(int num_classes) const {
  if (is_masked(variant)) {
    if (mask_count < 1 || mask_count > num_classes - 1) {
      throw Error("invalid_mask_count", "mask_count must be in 1..C-1 for masked variants");
    }
  }
  if (variant == Variant::kOriginal) throw Error("invalid_variant", "the original environment is not an edit");
}

std::vector<StyleEmbedding> synthetic_style_library(int dim, int count, std::uint64_t seed) {
  if (dim <= 0 || count <= 0) throw Error("invalid_argument", "style library needs positive dim and count");
  Rng rng(derive_seed(seed, hash_tag("style_library")));
  constexpr int kClusters = 8;
  std::vector<Vec> centers;
  for (int k = 0; k < kClusters; ++k) centers.push_back(normal_vector(rng, static_cast<std::size_t>(dim), 1.0));
  std::vector<StyleEmbedding> library;
  for (int i = 0; i < count; ++i) {
    const Vec& center = centers[static_cast<std::size_t>(rng() % kClusters)];
    Vec s = normal_vector(rng, static_cast<std::size_t>(dim), 0.5);
    for (std::size_t j = 0; j < s.size(); ++j) s[j] += center[j];
    library.push_back({std::move(s)});
  }
  return library;
}

StylePrior fit_style_prior(const std::vector<StyleEmbedding>& library) {
  if (library.empty()) throw Error("empty_style_library", "cannot fit a style prior to an empty library");
  const auto d = static_cast<Eigen::Index>(library.front().dim());
  Eigen::MatrixXd samples(static_cast<Eigen::Index>(library.size()), d);
  for (std::size_t i = 0; i < library.size(); ++i) {
    if (library[i].dim() != static_cast<std::size_t>(d)) throw Error("style_dim_mismatch", "inconsistent style dims");
    for (Eigen::Index j = 0; j < d; ++j) samples(static_cast<Eigen::Index>(i), j) = library[i].values[static_cast<std::size_t>(j)];
  }
  Eigen::RowVectorXd mean = samples.colwise().mean();
  Eigen::MatrixXd centered = samples.rowwise() - mean;
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(library.size());

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    llt.compute(cov + kPriorJitter * Eigen::MatrixXd::Identity(d, d));
  }
  Eigen::MatrixXd lower = llt.matrixL();

  StylePrior prior;
  prior.mean.assign(mean.data(), mean.data() + d);
  prior.covariance.resize(static_cast<std::size_t>(d * d));
  prior.cholesky.resize(static_cast<std::size_t>(d * d));
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) {
      prior.covariance[static_cast<std::size_t>(r * d + c)] = cov(r, c);
      prior.cholesky[static_cast<std::size_t>(r * d + c)] = lower(r, c);
    }
  }
  return prior;
}

StyleAssignment assign_styles(const Environment& env, const StylePrior& prior, StyleScope scope, std::uint64_t seed) {
  // All draws happen up front so shared scopes are exact.
  Rng rng(derive_seed(seed, hash_tag("assign_styles"), hash_tag(env.env_id)));
  StyleAssignment out(env.panoramas.size());
  StyleEmbedding shared;
  if (scope == StyleScope::kPerEnvironment) shared = prior.sample(rng);
  for (std::size_t n = 0; n < env.panoramas.size(); ++n) {
    StyleEmbedding per_pano;
    if (scope == StyleScope::kPerPanorama) per_pano = prior.sample(rng);
    for (std::size_t k = 0; k < env.panoramas[n].views.size(); ++k) {
      switch (scope) {
        case StyleScope::kPerView: out[n].push_back(prior.sample(rng)); break;
        case StyleScope::kPerPanorama: out[n].push_back(per_pano); break;
        case StyleScope::kPerEnvironment: out[n].push_back(shared); break;
      }
    }
  }
  return out;
}

StyleAssignment style_assignment_of(const Environment& env) {
  StyleAssignment out(env.panoramas.size());
  for (std::size_t n = 0; n < env.panoramas.size(); ++n) {
    for (const auto& v : env.panoramas[n].views) out[n].push_back({v.style});
  }
  return out;
}

Environment edit_style_transfer(const Environment& env, const StylePrior& prior, StyleScope scope, std::uint64_t seed,
                                const RenderContext& ctx) {
  const StyleAssignment styles = assign_styles(env, prior, scope, seed);
  Environment out = env;
  for (std::size_t n = 0; n < out.panoramas.size(); ++n) {
    for (std::size_t k = 0; k < out.panoramas[n].views.size(); ++k) {
      auto& view = out.panoramas[n].views[k];
      view.feature = conditional_instance_norm(view.feature, styles[n][k], ctx.modulator);
      view.style = styles[n][k].values;
    }
  }
  out.provenance = Variant::kStyleTransfer;
  out.edit = EditRecord{Variant::kStyleTransfer, scope, 0, seed, {}};
  return out;
}

MaskResult mask_semantics(const Environment& env, int k, std::uint64_t seed) {
  if (k < 1 || k > env.num_classes - 1) throw Error("invalid_mask_count", "k must be in 1..C-1");
  std::vector<int> ids(static_cast<std::size_t>(env.num_classes));
  std::iota(ids.begin(), ids.end(), 1);
  Rng rng(derive_seed(seed, hash_tag("mask_classes")));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(k));
  std::sort(ids.begin(), ids.end());

  const int mask_id = env.num_classes + 1;
  MaskResult result;
  result.masked_class_ids = ids;
  result.grids.resize(env.panoramas.size());
  for (std::size_t n = 0; n < env.panoramas.size(); ++n) {
    for (const auto& view : env.panoramas[n].views) {
      std::vector<int> grid = view.grid;
      for (int& c : grid) {
        if (std::binary_search(ids.begin(), ids.end(), c)) c = mask_id;
      }
      result.grids[n].push_back(std::move(grid));
    }
  }
  return result;
}

Environment edit_synthesis(const Environment& env, SynthesisStyle style_mode, int k, std::uint64_t seed,
                           const RenderContext& ctx) {
  if (k < 0) throw Error("invalid_mask_count", "mask count must be non-negative");
  Variant variant;
  if (style_mode == SynthesisStyle::kOriginal) {
    variant = k > 0 ? Variant::kSynthesis1Masked : Variant::kSynthesis1;
  } else {
    variant = k > 0 ? Variant::kSynthesis2Masked : Variant::kSynthesis2;
  }

  Environment out = env;
  out.appearance_table = ctx.appearance.sample(derive_seed(seed, hash_tag("resample_appearance"), hash_tag(env.env_id)));
  std::vector<int> masked;
  if (k > 0) {
    MaskResult mr = mask_semantics(env, k, seed);
    masked = mr.masked_class_ids;
    for (std::size_t n = 0; n < out.panoramas.size(); ++n) {
      for (std::size_t v = 0; v < out.panoramas[n].views.size(); ++v) out.panoramas[n].views[v].grid = std::move(mr.grids[n][v]);
    }
    out.appearance_table[env.num_classes + 1] = ctx.appearance.sample_mask_vector(derive_seed(seed, hash_tag(env.env_id)));
  }

  const StyleEmbedding zero = StyleEmbedding::zeros(ctx.modulator.style_dim);
  for (std::size_t n = 0; n < out.panoramas.size(); ++n) {
    for (std::size_t v = 0; v < out.panoramas[n].views.size(); ++v) {
      auto& view = out.panoramas[n].views[v];
      const StyleEmbedding style = style_mode == SynthesisStyle::kOriginal
                                       ? ctx.encoder.encode(env.panoramas[n].views[v].feature)
                                       : zero;
      view.feature = render_view(view.grid, out.appearance_table, &style, ctx.modulator, view.jitter_seed, ctx.jitter);
      view.style = style.values;
    }
  }
  out.provenance = variant;
  out.edit = EditRecord{variant, StyleScope::kPerView, k, seed, masked};
  return out;
}

Environment apply_edit(const Environment& env, const EditConfig& config, const StylePrior& prior,
                       const RenderContext& ctx) {
  config.validate(env.num_classes);
  switch (config.variant) {
    case Variant::kStyleTransfer: return edit_style_transfer(env, prior, config.style_scope, config.seed, ctx);
    case Variant::kSynthesis1: return edit_synthesis(env, SynthesisStyle::kOriginal, 0, config.seed, ctx);
    case Variant::kSynthesis2: return edit_synthesis(env, SynthesisStyle::kFixedZero, 0, config.seed, ctx);
    case Variant::kSynthesis1Masked:
      return edit_synthesis(env, SynthesisStyle::kOriginal, config.mask_count, config.seed, ctx);
    case Variant::kSynthesis2Masked:
      return edit_synthesis(env, SynthesisStyle::kFixedZero, config.mask_count, config.seed, ctx);
    case Variant::kOriginal: break;
  }
  throw Error("invalid_variant", "cannot apply an original-variant edit");
}

}  // namespace envedit
