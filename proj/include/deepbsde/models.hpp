#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "deepbsde/counter_rng.hpp"
#include "deepbsde/fbsde.hpp"

namespace deepbsde {

// Parameters of an n-component CIR short-rate model
//   dX^i = a^i (b^i - X^i) dt + sigma^i sqrt(X^i) dW.
struct CirParams {
  std::vector<double> a;      // mean-reversion speed, 1/time
  std::vector<double> b;      // long-run mean, rate units
  std::vector<double> sigma;  // vol-of-rate

  int n() const { return static_cast<int>(a.size()); }

  void validate() const {
    if (a.empty() || a.size() != b.size() || a.size() != sigma.size())
      throw std::invalid_argument("CirParams: a, b, sigma must be non-empty and equally sized");
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] < 0.0 || b[i] < 0.0 || sigma[i] < 0.0)
        throw std::invalid_argument("CirParams: entries must be nonnegative");
  }
};

// Draws a^i, b^i, sigma^i uniformly from [0,1] on the dedicated parameter
// stream, so a sampled model is pinned by its seed alone.
inline CirParams sample_cir_params(std::uint64_t param_seed, int n) {
  if (n < 1) throw std::invalid_argument("sample_cir_params: n must be >= 1");
  CirParams p;
  p.a.resize(n);
  p.b.resize(n);
  p.sigma.resize(n);
  for (int i = 0; i < n; ++i) {
    p.a[i] = rng::uniform(param_seed, rng::kParamStream, static_cast<std::uint64_t>(i));
    p.b[i] = rng::uniform(param_seed, rng::kParamStream, static_cast<std::uint64_t>(n + i));
    p.sigma[i] = rng::uniform(param_seed, rng::kParamStream, static_cast<std::uint64_t>(2 * n + i));
  }
  return p;
}

// Closed-form price of the zero-coupon bond under the 1-d CIR model, at
// time t with maturity T and short rate x. Evaluated in a factored form
// (every exponential has a nonpositive argument), so large gamma*(T-t)
// cannot overflow:
//   gamma = sqrt(a^2 + 2 sigma^2)
//   D     = (gamma - a) e^{-gamma tau} + (gamma + a)
//   price = (2 gamma e^{(a - gamma) tau / 2} / D)^{2ab/sigma^2}
//           * exp(2 (e^{-gamma tau} - 1) x / D).
// The deterministic limit sigma = 0 is handled separately.
inline double analytic_bond_price(const CirParams& params, double t, double T, double x) {
  params.validate();
  if (params.n() != 1) throw std::invalid_argument("analytic_bond_price: needs n = 1");
  if (t < 0.0 || t > T) throw std::domain_error("analytic_bond_price: requires 0 <= t <= T");
  if (x < 0.0) throw std::domain_error("analytic_bond_price: requires x >= 0");

  const double a = params.a[0], b = params.b[0], s = params.sigma[0];
  const double tau = T - t;
  if (tau == 0.0) return 1.0;

  if (s == 0.0) {
    // rate follows the ODE dX = a(b - X) dt; integrate it exactly
    const double h = a > 0.0 ? -std::expm1(-a * tau) / a : tau;
    return std::exp(-(b * tau + (x - b) * h));
  }

  const double gamma = std::sqrt(a * a + 2.0 * s * s);
  const double eneg = std::exp(-gamma * tau);
  const double den = (gamma - a) * eneg + (gamma + a);
  const double base = 2.0 * gamma * std::exp(0.5 * (a - gamma) * tau) / den;
  const double slope = 2.0 * (eneg - 1.0) / den;
  return std::pow(base, 2.0 * a * b / (s * s)) * std::exp(slope * x);
}

// Spatial derivative of analytic_bond_price (the bond delta); the price
// is exponential-affine in x, so d/dx = slope * price.
inline double analytic_bond_delta(const CirParams& params, double t, double T, double x) {
  params.validate();
  if (params.n() != 1) throw std::invalid_argument("analytic_bond_delta: needs n = 1");
  if (t < 0.0 || t > T) throw std::domain_error("analytic_bond_delta: requires 0 <= t <= T");
  const double a = params.a[0], s = params.sigma[0];
  const double tau = T - t;
  if (s == 0.0) {
    const double h = a > 0.0 ? -std::expm1(-a * tau) / a : tau;
    return -h * analytic_bond_price(params, t, T, x);
  }
  const double gamma = std::sqrt(a * a + 2.0 * s * s);
  const double eneg = std::exp(-gamma * tau);
  const double den = (gamma - a) * eneg + (gamma + a);
  return 2.0 * (eneg - 1.0) / den * analytic_bond_price(params, t, T, x);
}

// 1-d CIR zero-coupon bond (n = m = d = 1):
//   b(t,x,y) = a (b - x),  sigma(t,x) = sigma sqrt(x+),
//   f(t,x,y,z) = -x y,     g = 1,
// with the closed-form bond price as decoupling field.
inline FbsdeProblem make_cir_bond_1d(const CirParams& params, double T, double x0) {
  params.validate();
  if (params.n() != 1) throw std::invalid_argument("make_cir_bond_1d: needs n = 1");
  if (!(T > 0.0)) throw std::invalid_argument("make_cir_bond_1d: T must be positive");
  if (x0 < 0.0) throw std::invalid_argument("make_cir_bond_1d: x0 must be nonnegative");

  const double a = params.a[0], bmean = params.b[0], s = params.sigma[0];
  FbsdeProblem p;
  p.n = p.m = p.d = 1;
  p.T = T;
  p.x0 = {x0};
  p.drift = [a, bmean](double, CSpan x, CSpan, Span out) { out[0] = a * (bmean - x[0]); };
  p.drift_vjp_x = [a](double, CSpan, CSpan, CSpan lam, Span out) { out[0] = -a * lam[0]; };
  p.drift_vjp_y = [](double, CSpan, CSpan, CSpan, Span out) { out[0] = 0.0; };
  p.sigma_row = [s](int, double, double xi, Span out) { out[0] = s * sqrt_plus(xi); };
  p.sigma_row_dx = [s](int, double, double xi, Span out) { out[0] = s * dsqrt_plus(xi); };
  p.driver = [](double, CSpan x, CSpan y, CSpan, Span out) { out[0] = -x[0] * y[0]; };
  p.driver_vjp_x = [](double, CSpan, CSpan y, CSpan, CSpan lam, Span out) { out[0] = -y[0] * lam[0]; };
  p.driver_vjp_y = [](double, CSpan x, CSpan, CSpan, CSpan lam, Span out) { out[0] = -x[0] * lam[0]; };
  p.driver_vjp_z = [](double, CSpan, CSpan, CSpan, CSpan, Span out) { out[0] = 0.0; };
  p.terminal = [](CSpan, Span out) { out[0] = 1.0; };
  p.terminal_vjp = [](CSpan, CSpan, Span out) { out[0] = 0.0; };
  p.analytic = [params, T](double t, CSpan x, Span out) {
    out[0] = analytic_bond_price(params, t, T, x[0] > 0.0 ? x[0] : 0.0);
  };
  return p;
}

// Multi-component CIR bond (m = 1): each X^i mean-reverts with its own
// (a^i, b^i, sigma^i) and the driver discounts at the running maximum
// rate, f(t,x,y,z) = -(max_i x_i) y, g = 1.
//
// d = 1 puts every sigma row on one shared Brownian driver; d = n gives
// each component its own (row i sits in column i). Other values of d
// have no natural row placement and are rejected.
inline FbsdeProblem make_cir_bond_multi(const CirParams& params, int n, int d, double T,
                                        std::vector<double> x0) {
  params.validate();
  if (n < 1) throw std::invalid_argument("make_cir_bond_multi: n must be >= 1");
  if (params.n() != n) throw std::invalid_argument("make_cir_bond_multi: params size != n");
  if (d != 1 && d != n) throw std::invalid_argument("make_cir_bond_multi: d must be 1 or n");
  if (!(T > 0.0)) throw std::invalid_argument("make_cir_bond_multi: T must be positive");
  if (x0.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("make_cir_bond_multi: x0 must have length n");
  for (double v : x0)
    if (v < 0.0) throw std::invalid_argument("make_cir_bond_multi: x0 must be nonnegative");

  auto cp = std::make_shared<const CirParams>(params);
  FbsdeProblem p;
  p.n = n;
  p.m = 1;
  p.d = d;
  p.T = T;
  p.x0 = std::move(x0);
  p.drift = [cp](double, CSpan x, CSpan, Span out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = cp->a[i] * (cp->b[i] - x[i]);
  };
  p.drift_vjp_x = [cp](double, CSpan x, CSpan, CSpan lam, Span out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = -cp->a[i] * lam[i];
  };
  p.drift_vjp_y = [](double, CSpan, CSpan, CSpan, Span out) { out[0] = 0.0; };
  if (d == 1) {
    p.sigma_row = [cp](int row, double, double xi, Span out) {
      out[0] = cp->sigma[row] * sqrt_plus(xi);
    };
    p.sigma_row_dx = [cp](int row, double, double xi, Span out) {
      out[0] = cp->sigma[row] * dsqrt_plus(xi);
    };
  } else {
    p.sigma_row = [cp](int row, double, double xi, Span out) {
      std::fill(out.begin(), out.end(), 0.0);
      out[row] = cp->sigma[row] * sqrt_plus(xi);
    };
    p.sigma_row_dx = [cp](int row, double, double xi, Span out) {
      std::fill(out.begin(), out.end(), 0.0);
      out[row] = cp->sigma[row] * dsqrt_plus(xi);
    };
  }
  p.driver = [](double, CSpan x, CSpan y, CSpan, Span out) {
    out[0] = -*std::max_element(x.begin(), x.end()) * y[0];
  };
  p.driver_vjp_x = [](double, CSpan x, CSpan y, CSpan, CSpan lam, Span out) {
    // subgradient at ties: first maximal component
    const auto it = std::max_element(x.begin(), x.end());
    std::fill(out.begin(), out.end(), 0.0);
    out[static_cast<std::size_t>(it - x.begin())] = -y[0] * lam[0];
  };
  p.driver_vjp_y = [](double, CSpan x, CSpan, CSpan, CSpan lam, Span out) {
    out[0] = -*std::max_element(x.begin(), x.end()) * lam[0];
  };
  p.driver_vjp_z = [](double, CSpan, CSpan, CSpan, CSpan, Span out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  p.terminal = [](CSpan, Span out) { out[0] = 1.0; };
  p.terminal_vjp = [](CSpan, CSpan, Span out) { std::fill(out.begin(), out.end(), 0.0); };
  return p;
}

// Degenerate problem with b = sigma = f = 0 and constant payoff g = c.
// X stays at x0 and, under zero increments or a zero network, Y stays at
// alpha, so the loss and its alpha-gradient have closed forms.
inline FbsdeProblem make_frozen_test(int n, int m, int d, double T, std::vector<double> x0,
                                     double g_const) {
  if (n < 1 || m < 1 || d < 1) throw std::invalid_argument("make_frozen_test: dims must be >= 1");
  if (!(T > 0.0)) throw std::invalid_argument("make_frozen_test: T must be positive");
  if (x0.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("make_frozen_test: x0 must have length n");

  FbsdeProblem p;
  p.n = n;
  p.m = m;
  p.d = d;
  p.T = T;
  p.x0 = std::move(x0);
  auto zero_fill = [](Span out) { std::fill(out.begin(), out.end(), 0.0); };
  p.drift = [zero_fill](double, CSpan, CSpan, Span out) { zero_fill(out); };
  p.drift_vjp_x = [zero_fill](double, CSpan, CSpan, CSpan, Span out) { zero_fill(out); };
  p.drift_vjp_y = [zero_fill](double, CSpan, CSpan, CSpan, Span out) { zero_fill(out); };
  p.sigma_row = [zero_fill](int, double, double, Span out) { zero_fill(out); };
  p.sigma_row_dx = [zero_fill](int, double, double, Span out) { zero_fill(out); };
  p.driver = [zero_fill](double, CSpan, CSpan, CSpan, Span out) { zero_fill(out); };
  p.driver_vjp_x = [zero_fill](double, CSpan, CSpan, CSpan, CSpan, Span out) { zero_fill(out); };
  p.driver_vjp_y = [zero_fill](double, CSpan, CSpan, CSpan, CSpan, Span out) { zero_fill(out); };
  p.driver_vjp_z = [zero_fill](double, CSpan, CSpan, CSpan, CSpan, Span out) { zero_fill(out); };
  p.terminal = [g_const](CSpan, Span out) { std::fill(out.begin(), out.end(), g_const); };
  p.terminal_vjp = [zero_fill](CSpan, CSpan, Span out) { zero_fill(out); };
  p.analytic = [g_const](double, CSpan, Span out) { std::fill(out.begin(), out.end(), g_const); };
  return p;
}

// Fully coupled problem with smooth, bounded coefficients and constant
// diffusion. Every adjoint path is exercised (b depends on y, f on x, y
// and z, g on x), and with no square-root kink the reverse pass must
// match central finite differences to tight tolerance.
inline FbsdeProblem make_smooth_surrogate(int n, int m, int d, double T, double x0_fill,
                                          double sigma0) {
  if (n < 1 || m < 1 || d < 1)
    throw std::invalid_argument("make_smooth_surrogate: dims must be >= 1");
  if (!(T > 0.0)) throw std::invalid_argument("make_smooth_surrogate: T must be positive");

  FbsdeProblem p;
  p.n = n;
  p.m = m;
  p.d = d;
  p.T = T;
  p.x0.assign(static_cast<std::size_t>(n), x0_fill);
  p.drift = [m](double, CSpan x, CSpan y, Span out) {
    double ybar = 0.0;
    for (double v : y) ybar += v;
    ybar /= m;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 0.3 * std::sin(x[i]) + 0.2 * ybar;
  };
  p.drift_vjp_x = [](double, CSpan x, CSpan, CSpan lam, Span out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 0.3 * std::cos(x[i]) * lam[i];
  };
  p.drift_vjp_y = [m](double, CSpan, CSpan, CSpan lam, Span out) {
    double s = 0.0;
    for (double v : lam) s += v;
    std::fill(out.begin(), out.end(), 0.2 * s / m);
  };
  p.sigma_row = [sigma0](int, double, double, Span out) {
    std::fill(out.begin(), out.end(), sigma0);
  };
  p.sigma_row_dx = [](int, double, double, Span out) { std::fill(out.begin(), out.end(), 0.0); };
  p.driver = [n, d](double, CSpan x, CSpan y, CSpan z, Span out) {
    double sx = 0.0;
    for (double v : x) sx += std::sin(v);
    sx /= n;
    for (std::size_t j = 0; j < y.size(); ++j) {
      double zrow = 0.0;
      for (int l = 0; l < d; ++l) zrow += z[j * d + l];
      out[j] = 0.3 * std::cos(y[j]) + 0.2 * sx + 0.1 * zrow / d;
    }
  };
  p.driver_vjp_x = [n](double, CSpan x, CSpan, CSpan, CSpan lam, Span out) {
    double s = 0.0;
    for (double v : lam) s += v;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 0.2 * std::cos(x[i]) / n * s;
  };
  p.driver_vjp_y = [](double, CSpan, CSpan y, CSpan, CSpan lam, Span out) {
    for (std::size_t j = 0; j < y.size(); ++j) out[j] = -0.3 * std::sin(y[j]) * lam[j];
  };
  p.driver_vjp_z = [d](double, CSpan, CSpan, CSpan, CSpan lam, Span out) {
    for (std::size_t j = 0; j < lam.size(); ++j)
      for (int l = 0; l < d; ++l) out[j * d + l] = 0.1 / d * lam[j];
  };
  p.terminal = [n](CSpan x, Span out) {
    double xbar = 0.0;
    for (double v : x) xbar += v;
    xbar /= n;
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::tanh(xbar + 0.2 * j);
  };
  p.terminal_vjp = [n](CSpan x, CSpan lam, Span out) {
    double xbar = 0.0;
    for (double v : x) xbar += v;
    xbar /= n;
    double s = 0.0;
    for (std::size_t j = 0; j < lam.size(); ++j) {
      const double th = std::tanh(xbar + 0.2 * j);
      s += lam[j] * (1.0 - th * th);
    }
    std::fill(out.begin(), out.end(), s / n);
  };
  return p;
}

}  // namespace deepbsde
