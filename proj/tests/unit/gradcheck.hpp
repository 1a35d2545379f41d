#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "envedit/nn.hpp"

namespace envedit::testing {

struct GradCheckResult {
  int checked = 0;
  int failures = 0;
  int within_rtol = 0;  // passes on relative error alone
  double worst = 0.0;
  std::string worst_name;
};

// Compares analytic gradients of `loss` (a scalar built on a fresh tape) with central
// differences on up to `count` randomly chosen scalars. A coordinate passes when the
// relative error is below `rtol` or both values are below `atol` in magnitude. A nonzero
// `abs_floor` also accepts absolute differences under it (central-difference round-off).
inline GradCheckResult grad_check(nn::ParameterSet& params, const std::function<nn::Var(nn::Tape&)>& loss,
                                  int count, std::uint64_t seed, double rtol = 1e-4, double atol = 1e-8,
                                  double h = 1e-5, double abs_floor = 0.0) {
  params.zero_grad();
  {
    nn::Tape t;
    t.backward(loss(t));
  }
  std::vector<std::pair<nn::Parameter*, std::size_t>> coords;
  for (auto* p : params.all()) {
    for (std::size_t i = 0; i < p->size(); ++i) coords.emplace_back(p, i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (static_cast<int>(coords.size()) > count) coords.resize(static_cast<std::size_t>(count));

  GradCheckResult r;
  for (auto [p, i] : coords) {
    const double saved = p->value[i];
    p->value[i] = saved + h;
    double up;
    {
      nn::Tape t;
      up = t.scalar(loss(t));
    }
    p->value[i] = saved - h;
    double down;
    {
      nn::Tape t;
      down = t.scalar(loss(t));
    }
    p->value[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = p->grad[i];
    const double err = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-12});
    const bool ok = err < rtol || (std::abs(numeric) < atol && std::abs(analytic) < atol) ||
                    std::abs(numeric - analytic) < abs_floor;
    ++r.checked;
    if (err < rtol) ++r.within_rtol;
    if (!ok) ++r.failures;
    if (!ok && err > r.worst) {
      r.worst = err;
      r.worst_name = p->name + "[" + std::to_string(i) + "]";
    }
  }
  return r;
}

}  // namespace envedit::testing
