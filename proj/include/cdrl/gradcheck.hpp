// Finite-difference gradient verification.
//
// Compares analytic (tape) gradients against central differences
// f(p+h)-f(p-h) / 2h, coordinate by coordinate.  ReLU kinks and other
// non-smooth points are detected two ways and excluded (counted) rather than
// compared:
//   - a kink strictly inside one stencil arm makes the h and h/2 stencils
//     disagree;
//   - a kink sitting almost exactly at the evaluation point makes both
//     central stencils agree on the average of the two one-sided slopes,
//     which no symmetric stencil can distinguish from a smooth function.
//     The one-sided secants expose it: they differ by the full slope jump.
//     A mismatching coordinate whose analytic-vs-stencil gap is within that
//     jump is non-smooth, not wrong; a genuinely broken gradient at a smooth
//     coordinate leaves the secants agreeing to O(h * curvature), far below
//     the bug, so it still fails.
//
// Intended to run with T = double; float lacks the headroom to resolve a
// 1e-4 relative tolerance through an h=1e-3 stencil.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cdrl/net.hpp"
#include "cdrl/rng.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  int checked = 0;
  int skipped_nonsmooth = 0;

  bool pass(double tol) const { return checked > 0 && max_rel_err < tol; }
};

inline double gradcheck_rel_err(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / denom;
}

// Checks `analytic` (aligned with params.items) against central differences
// of `loss`, which must re-evaluate the objective from the current contents
// of `params`.  Samples up to `coords_per_tensor` coordinates per parameter
// tensor (all of them when the tensor is at most that size).
template <typename T, typename LossFn>
GradCheckReport check_gradients(ParamSet<T>& params, const std::vector<Tensor<T>>& analytic,
                                LossFn loss, T h, int coords_per_tensor, Rng& rng) {
  static_assert(sizeof(T) >= 8, "gradient checking needs double precision");
  GradCheckReport report;
  // Every coordinate restores the parameter it perturbed, so the unperturbed
  // objective is constant across the whole call.
  const double f0 = static_cast<double>(loss());
  for (std::size_t pi = 0; pi < params.count(); ++pi) {
    Tensor<T>& p = params.items[pi].second;
    const Tensor<T>& g = analytic[pi];
    const std::size_t n = p.numel();
    std::vector<std::size_t> coords;
    if (static_cast<int>(n) <= coords_per_tensor) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int c = 0; c < coords_per_tensor; ++c) {
        coords.push_back(static_cast<std::size_t>(rng() % n));
      }
    }
    for (std::size_t i : coords) {
      const T saved = p[i];
      auto eval_at = [&](T delta) {
        p[i] = saved + delta;
        const T v = loss();
        p[i] = saved;
        return static_cast<double>(v);
      };
      const double up_h = eval_at(h);
      const double dn_h = eval_at(-h);
      const double up_h2 = eval_at(h / T(2));
      const double dn_h2 = eval_at(-(h / T(2)));
      const double hh = static_cast<double>(h);
      const double fd_h = (up_h - dn_h) / (2.0 * hh);
      const double fd_h2 = (up_h2 - dn_h2) / hh;
      // Smooth objectives give matching stencils; a kink inside the stencil
      // does not.  Skip those coordinates instead of comparing garbage.
      if (std::fabs(fd_h - fd_h2) > 1e-3 * std::max(1.0, std::fabs(fd_h))) {
        ++report.skipped_nonsmooth;
        continue;
      }
      const double a = static_cast<double>(g[i]);
      const double rel = gradcheck_rel_err(a, fd_h2);
      if (rel >= 1e-5) {
        // Matching stencils but a mismatching analytic value: either a bug or
        // a kink centred on the evaluation point.  The one-sided secants
        // separate the two (see the header comment).
        const double fwd = (up_h - f0) / hh;
        const double bwd = (f0 - dn_h) / hh;
        const double sided_gap = std::fabs(fwd - bwd);
        if (std::fabs(fd_h2 - a) <= 2.0 * sided_gap) {
          ++report.skipped_nonsmooth;
          continue;
        }
      }
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params.items[pi].first;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace cdrl
