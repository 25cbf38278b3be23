#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepbsde/counter_rng.hpp"
#include "deepbsde/fbsde.hpp"
#include "deepbsde/models.hpp"
#include "deepbsde/paths.hpp"
#include "deepbsde/rollout.hpp"

namespace deepbsde {

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  long paths = 0;
  int steps = 0;
};

// Plain Monte Carlo price of the zero-coupon bond
//   E[ exp(-int_0^T max_i X_s^i ds) ]
// under the n-component CIR model, with the same full-truncation Euler
// scheme the solver uses and trapezoidal quadrature of the integrated
// rate. Independent of the network stack entirely; used by tests and the
// validate-analytic command. d must be 1 (shared driver) or n.
inline McEstimate mc_bond_price(const CirParams& params, int n, int d, double T,
                                const std::vector<double>& x0, long paths, int steps,
                                std::uint64_t seed) {
  params.validate();
  if (params.n() != n) throw std::invalid_argument("mc_bond_price: params size != n");
  if (d != 1 && d != n) throw std::invalid_argument("mc_bond_price: d must be 1 or n");
  if (paths < 100) throw std::invalid_argument("mc_bond_price: needs >= 100 paths");
  if (steps < 10) throw std::invalid_argument("mc_bond_price: needs >= 10 steps");
  if (x0.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("mc_bond_price: x0 must have length n");

  const double dt = T / steps;
  const double sq = std::sqrt(dt);
  const long nchunks = detail::num_chunks(paths);
  std::vector<double> chunk_sum(static_cast<std::size_t>(nchunks), 0.0);
  std::vector<double> chunk_sq(static_cast<std::size_t>(nchunks), 0.0);

  detail::parallel_chunks(paths, [&](long c, long begin, long end) {
    std::vector<double> x(static_cast<std::size_t>(n)), xn(static_cast<std::size_t>(n));
    std::vector<double> dw(static_cast<std::size_t>(d));
    double s1 = 0.0, s2 = 0.0;
    for (long p = begin; p < end; ++p) {
      std::copy(x0.begin(), x0.end(), x.begin());
      double integral = 0.0;
      double rate = *std::max_element(x.begin(), x.end());
      for (int k = 0; k < steps; ++k) {
        for (int l = 0; l < d; ++l)
          dw[l] = sq * rng::normal(seed, 1, increment_index(p, k, l, steps, d));
        for (int i = 0; i < n; ++i) {
          const double noise = d == 1 ? dw[0] : dw[i];
          xn[i] = x[i] + params.a[i] * (params.b[i] - x[i]) * dt +
                  params.sigma[i] * sqrt_plus(x[i]) * noise;
        }
        x.swap(xn);
        const double rate_next = *std::max_element(x.begin(), x.end());
        integral += 0.5 * dt * (rate + rate_next);
        rate = rate_next;
      }
      const double disc = std::exp(-integral);
      s1 += disc;
      s2 += disc * disc;
    }
    chunk_sum[static_cast<std::size_t>(c)] = s1;
    chunk_sq[static_cast<std::size_t>(c)] = s2;
  });

  double s1 = 0.0, s2 = 0.0;
  for (long c = 0; c < nchunks; ++c) {
    s1 += chunk_sum[static_cast<std::size_t>(c)];
    s2 += chunk_sq[static_cast<std::size_t>(c)];
  }
  McEstimate est;
  est.paths = paths;
  est.steps = steps;
  est.value = s1 / static_cast<double>(paths);
  const double var = std::max(0.0, (s2 / paths - est.value * est.value)) /
                     static_cast<double>(paths - 1) * paths;
  est.std_error = std::sqrt(var / static_cast<double>(paths));
  return est;
}

// Central finite difference of the batch loss with respect to one flat
// parameter coordinate, same batch on both sides. This is the reference
// that backward() is checked against, so it must only ever touch the
// primal rollout.
inline double fd_gradient(const FbsdeProblem& problem, const NetParams& params,
                          const PathBatch& batch, std::size_t coord, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_gradient: h must be positive");
  if (coord >= params.data.size()) throw std::invalid_argument("fd_gradient: coord out of range");
  NetParams shifted = params;
  RolloutTape tape;
  shifted.data[coord] = params.data[coord] + h;
  const double up = simulate(problem, shifted, batch, tape).loss;
  shifted.data[coord] = params.data[coord] - h;
  const double down = simulate(problem, shifted, batch, tape).loss;
  return (up - down) / (2.0 * h);
}

// Relative disagreement with an absolute floor so that two near-zero
// values compare as equal.
inline double rel_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale < 1e-7) return 0.0;
  return std::abs(a - b) / scale;
}

struct AnalyticCheck {
  double analytic = 0.0;
  McEstimate mc;
  double sigmas = 0.0;  // |analytic - mc| in standard errors
  bool pass = false;
};

// Compares the closed-form 1-d bond price against the Monte Carlo oracle;
// passes iff they agree within 3 standard errors (plus a tiny absolute
// floor for the deterministic sigma = 0 case, where the standard error
// collapses to zero).
inline AnalyticCheck check_analytic_vs_mc(const CirParams& params, double T, double x0,
                                          long paths, int steps, std::uint64_t seed,
                                          double analytic_offset = 0.0) {
  AnalyticCheck chk;
  chk.analytic = analytic_bond_price(params, 0.0, T, x0) + analytic_offset;
  chk.mc = mc_bond_price(params, 1, 1, T, {x0}, paths, steps, seed);
  const double se = chk.mc.std_error;
  const double diff = std::abs(chk.analytic - chk.mc.value);
  chk.sigmas = se > 0.0 ? diff / se
                        : (diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
  chk.pass = diff <= 3.0 * se + 1e-9;
  return chk;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t worst_coord = 0;
  int coords_checked = 0;
  bool pass = false;
};

// Checks backward() against central differences on `count` parameter
// coordinates drawn from the given selection stream. An optional
// tamper_coord adds tamper_delta to that adjoint entry first (negative
// control for the harness itself).
inline GradCheck check_gradients(const FbsdeProblem& problem, const NetParams& params,
                                 const PathBatch& batch, int count, double h, double threshold,
                                 std::uint64_t select_seed,
                                 long tamper_coord = -1, double tamper_delta = 0.0) {
  RolloutTape tape;
  simulate(problem, params, batch, tape);
  GradReport rep = backward(problem, params, tape);
  if (!rep.ok) throw std::runtime_error("check_gradients: non-finite adjoints");
  if (tamper_coord >= 0) rep.grad[static_cast<std::size_t>(tamper_coord)] += tamper_delta;

  GradCheck chk;
  chk.coords_checked = count;
  const std::size_t psize = params.data.size();
  for (int i = 0; i < count; ++i) {
    // coordinate 0 (alpha) is always checked; the rest are drawn at random
    const std::size_t coord =
        i == 0 ? 0
               : static_cast<std::size_t>(
                     rng::uniform(select_seed, 2, static_cast<std::uint64_t>(i)) *
                     static_cast<double>(psize)) %
                     psize;
    const double fd = fd_gradient(problem, params, batch, coord, h);
    const double err = rel_error(rep.grad[coord], fd);
    if (err > chk.max_rel_error) {
      chk.max_rel_error = err;
      chk.worst_coord = coord;
    }
  }
  chk.pass = chk.max_rel_error <= threshold;
  return chk;
}

}  // namespace deepbsde
