#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "store/nn.hpp"
#include "store/tensor.hpp"

namespace store::testing {

// Worst elementwise |analytic - numeric| / max(|analytic|, |numeric|, floor)
// over every entry of every param, numeric gradients by central differences.
// The floor keeps entries whose true gradient is ~0 from dividing roundoff
// by zero.
// `analytic_fn` is differentiated by the graph, `numeric_fn` by central
// differences; they differ only when the oracle freezes something the graph
// expresses with stop_gradient.
inline double max_rel_error(const std::function<Tensor()>& analytic_fn, const std::function<Tensor()>& numeric_fn,
                            std::vector<Tensor> params, double h = 1e-4, double floor = 1e-6) {
  const std::vector<Tensor> analytic = grad(analytic_fn(), params);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto vals = params[p].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + h;
      const double up = numeric_fn().item();
      vals[i] = keep - h;
      const double down = numeric_fn().item();
      vals[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

inline double max_rel_error(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params, double h = 1e-4,
                            double floor = 1e-6) {
  return max_rel_error(loss_fn, loss_fn, std::move(params), h, floor);
}

// sum(y * w) for a fixed random w, so every output entry gets a distinct
// upstream gradient.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, randn(y.shape(), rng, 1.0)));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace store::testing
