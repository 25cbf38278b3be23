#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace deepbsde {

using Span = std::span<double>;
using CSpan = std::span<const double>;

// Full-truncation square root: sqrt(max(x, 0)). The Euler scheme can step
// a square-root diffusion below zero even though the continuous process
// cannot, so every sqrt in a diffusion coefficient goes through here.
inline double sqrt_plus(double x) { return std::sqrt(x > 0.0 ? x : 0.0); }

// Derivative of sqrt_plus used by the reverse pass. The true derivative
// blows up at 0+; below eps_grad it is treated as 0, which caps the
// magnitude at 1/(2*sqrt(eps_grad)).
inline constexpr double kSqrtGradEps = 1e-8;
inline double dsqrt_plus(double x) { return x > kSqrtGradEps ? 0.5 / std::sqrt(x) : 0.0; }

// Coupled FBSDE
//   dX =  b(t, X, Y) dt + <sigma(t, X), dW>,      X_0 = x0
//   dY = -f(t, X, Y, Z) dt + <Z, dW>,             Y_T = g(X_T)
// with X in R^n, Y in R^m, W in R^d, Z in R^{m x d}.
//
// The diffusion is supplied row-wise as sigma_row(i, t, x_i): row i may
// depend on t and the i-th state component only, which encodes the
// component-separable structure the solver relies on.
//
// Besides the coefficients themselves, a problem carries their adjoint
// products (out = J^T lam); the reverse pass through the unrolled Euler
// recursion consumes these instead of materialised Jacobians. All
// callbacks write into caller-owned buffers; none may allocate.
struct FbsdeProblem {
  int n = 1;  // forward state dimension
  int m = 1;  // backward state dimension
  int d = 1;  // Brownian dimension
  double T = 1.0;
  std::vector<double> x0;

  // coefficients
  std::function<void(double t, CSpan x, CSpan y, Span out)> drift;            // out[n]
  std::function<void(int row, double t, double xi, Span out)> sigma_row;      // out[d]
  std::function<void(double t, CSpan x, CSpan y, CSpan z, Span out)> driver;  // out[m], z is m*d row-major
  std::function<void(CSpan x, Span out)> terminal;                            // out[m]

  // adjoint products, out = J^T lam
  std::function<void(double t, CSpan x, CSpan y, CSpan lam, Span out)> drift_vjp_x;  // lam[n] -> out[n]
  std::function<void(double t, CSpan x, CSpan y, CSpan lam, Span out)> drift_vjp_y;  // lam[n] -> out[m]
  std::function<void(int row, double t, double xi, Span out)> sigma_row_dx;          // out[d]
  std::function<void(double t, CSpan x, CSpan y, CSpan z, CSpan lam, Span out)> driver_vjp_x;  // lam[m] -> out[n]
  std::function<void(double t, CSpan x, CSpan y, CSpan z, CSpan lam, Span out)> driver_vjp_y;  // lam[m] -> out[m]
  std::function<void(double t, CSpan x, CSpan y, CSpan z, CSpan lam, Span out)> driver_vjp_z;  // lam[m] -> out[m*d]
  std::function<void(CSpan x, CSpan lam, Span out)> terminal_vjp;                              // lam[m] -> out[n]

  // decoupling field u(t, x) when known in closed form, out[m]
  std::function<void(double t, CSpan x, Span out)> analytic;

  bool has_analytic() const { return static_cast<bool>(analytic); }

  // Value of the analytic solution at (0, x0); only valid if has_analytic().
  std::vector<double> analytic_at_start() const {
    std::vector<double> out(static_cast<std::size_t>(m));
    analytic(0.0, CSpan{x0.data(), x0.size()}, Span{out.data(), out.size()});
    return out;
  }

  void validate() const {
    if (n < 1 || m < 1 || d < 1) throw std::invalid_argument("FbsdeProblem: dimensions must be >= 1");
    if (!(T > 0.0)) throw std::invalid_argument("FbsdeProblem: T must be positive");
    if (x0.size() != static_cast<std::size_t>(n))
      throw std::invalid_argument("FbsdeProblem: x0 must have length n");
    if (!drift || !sigma_row || !driver || !terminal || !drift_vjp_x || !drift_vjp_y ||
        !sigma_row_dx || !driver_vjp_x || !driver_vjp_y || !driver_vjp_z || !terminal_vjp)
      throw std::invalid_argument("FbsdeProblem: missing coefficient evaluator");
  }
};

}  // namespace deepbsde
