#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "deepbsde/fbsde.hpp"
#include "deepbsde/network.hpp"
#include "deepbsde/paths.hpp"

namespace deepbsde {

// Paths are processed in fixed chunks of this many, and per-chunk partial
// results (loss sums, gradients) are combined in chunk order. The chunk
// grid never depends on the worker count, so any OMP_NUM_THREADS value
// produces bit-identical output.
inline constexpr long kPathChunk = 64;

namespace detail {

template <class Fn>
inline void parallel_chunks(long M, Fn&& fn) {
  const long nchunks = (M + kPathChunk - 1) / kPathChunk;
#pragma omp parallel for schedule(dynamic)
  for (long c = 0; c < nchunks; ++c)
    fn(c, c * kPathChunk, std::min(M, (c + 1) * kPathChunk));
}

inline long num_chunks(long M) { return (M + kPathChunk - 1) / kPathChunk; }

inline bool all_finite(CSpan v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

// Per-batch record of everything the reverse pass needs: the discrete
// states X_k, Y_k (N+1 of each), the network pre-activations and outputs
// at steps 0..N-1, and the increments that drove the rollout.
struct RolloutTape {
  long M = 0;
  int N = 0;
  NetShape shape;
  double dt = 0.0;
  std::vector<double> X;   // M x (N+1) x n
  std::vector<double> Y;   // M x (N+1) x m
  std::vector<double> H1;  // M x N x width
  std::vector<double> H2;  // M x N x width
  std::vector<double> Z;   // M x N x (m*d)
  const PathBatch* batch = nullptr;  // must outlive the tape

  Span x_at(long p, int k) {
    return {X.data() + (static_cast<std::size_t>(p) * (N + 1) + k) * shape.n,
            static_cast<std::size_t>(shape.n)};
  }
  CSpan x_at(long p, int k) const {
    return {X.data() + (static_cast<std::size_t>(p) * (N + 1) + k) * shape.n,
            static_cast<std::size_t>(shape.n)};
  }
  Span y_at(long p, int k) {
    return {Y.data() + (static_cast<std::size_t>(p) * (N + 1) + k) * shape.m,
            static_cast<std::size_t>(shape.m)};
  }
  CSpan y_at(long p, int k) const {
    return {Y.data() + (static_cast<std::size_t>(p) * (N + 1) + k) * shape.m,
            static_cast<std::size_t>(shape.m)};
  }
  Span h1_at(long p, int k) {
    return {H1.data() + (static_cast<std::size_t>(p) * N + k) * shape.width(),
            static_cast<std::size_t>(shape.width())};
  }
  CSpan h1_at(long p, int k) const {
    return {H1.data() + (static_cast<std::size_t>(p) * N + k) * shape.width(),
            static_cast<std::size_t>(shape.width())};
  }
  Span h2_at(long p, int k) {
    return {H2.data() + (static_cast<std::size_t>(p) * N + k) * shape.width(),
            static_cast<std::size_t>(shape.width())};
  }
  CSpan h2_at(long p, int k) const {
    return {H2.data() + (static_cast<std::size_t>(p) * N + k) * shape.width(),
            static_cast<std::size_t>(shape.width())};
  }
  Span z_at(long p, int k) {
    return {Z.data() + (static_cast<std::size_t>(p) * N + k) * shape.output(),
            static_cast<std::size_t>(shape.output())};
  }
  CSpan z_at(long p, int k) const {
    return {Z.data() + (static_cast<std::size_t>(p) * N + k) * shape.output(),
            static_cast<std::size_t>(shape.output())};
  }

  // Sizes the buffers without clearing them: simulate() overwrites every
  // slot it later reads, so a reused tape needs no zero fill.
  void reset(long M_, int N_, const NetShape& s) {
    M = M_;
    N = N_;
    shape = s;
    X.resize(static_cast<std::size_t>(M) * (N + 1) * s.n);
    Y.resize(static_cast<std::size_t>(M) * (N + 1) * s.m);
    H1.resize(static_cast<std::size_t>(M) * N * s.width());
    H2.resize(static_cast<std::size_t>(M) * N * s.width());
    Z.resize(static_cast<std::size_t>(M) * N * s.output());
  }
};

struct LossReport {
  double loss = 0.0;                     // (1/M) sum_i |g(X_T^i) - Y_T^i|^2
  std::vector<double> terminal_sq_error;  // per path |g - Y_T|^2
  std::vector<double> y0;                 // alpha snapshot
  bool diverged = false;
  long fail_path = -1;
  int fail_step = -1;
};

struct GradReport {
  std::vector<double> grad;  // flat, shaped like NetParams::data
  bool ok = true;
  long fail_path = -1;
  int fail_step = -1;
};

// Discrete forward system over one batch:
//   X_{k+1} = X_k + b(t_k, X_k, Y_k) dt + <sigma(t_k, X_k), dW_k>
//   Y_{k+1} = Y_k - f(t_k, X_k, Y_k, Z_k) dt + Z_k dW_k
//   Z_k     = net(t_k, X_k)   for k = 0..N-1 (t_N is never evaluated)
// starting from X_0 = x0, Y_0 = alpha. Fills the tape for backward();
// on a diverged report the tape contents are not meaningful.
inline LossReport simulate(const FbsdeProblem& problem, const NetParams& params,
                           const PathBatch& batch, RolloutTape& tape) {
  problem.validate();
  if (params.shape.n != problem.n || params.shape.m != problem.m || params.shape.d != problem.d)
    throw std::invalid_argument("simulate: params shape does not match problem");
  if (batch.d != problem.d || batch.M < 1 || batch.N < 1)
    throw std::invalid_argument("simulate: batch does not match problem");

  const long M = batch.M;
  const int N = batch.N, n = problem.n, m = problem.m, d = problem.d;
  const double dt = batch.dt, T = problem.T;
  tape.reset(M, N, params.shape);
  tape.dt = dt;
  tape.batch = &batch;

  LossReport report;
  report.terminal_sq_error.assign(static_cast<std::size_t>(M), 0.0);
  report.y0.assign(params.alpha().begin(), params.alpha().end());

  const long nchunks = detail::num_chunks(M);
  std::vector<double> chunk_loss(static_cast<std::size_t>(nchunks), 0.0);
  std::vector<long> chunk_fail_path(static_cast<std::size_t>(nchunks), -1);
  std::vector<int> chunk_fail_step(static_cast<std::size_t>(nchunks), -1);

  detail::parallel_chunks(M, [&](long c, long begin, long end) {
    std::vector<double> in_buf(static_cast<std::size_t>(n + 1));
    std::vector<double> bvec(static_cast<std::size_t>(n));
    std::vector<double> fvec(static_cast<std::size_t>(m));
    std::vector<double> sig_row(static_cast<std::size_t>(d));
    std::vector<double> gv(static_cast<std::size_t>(m));

    for (long p = begin; p < end; ++p) {
      std::copy(problem.x0.begin(), problem.x0.end(), tape.x_at(p, 0).begin());
      std::copy(params.alpha().begin(), params.alpha().end(), tape.y_at(p, 0).begin());
      bool dead = false;
      for (int k = 0; k < N && !dead; ++k) {
        const double tk = k * dt;
        CSpan x = tape.x_at(p, k);
        CSpan y = tape.y_at(p, k);
        Span z = tape.z_at(p, k);
        forward_eval(params, tk / T, x, tape.h1_at(p, k), tape.h2_at(p, k), z, Span{in_buf});
        problem.drift(tk, x, y, Span{bvec});
        problem.driver(tk, x, y, z, Span{fvec});
        CSpan dw = batch.step_slice(p, k);
        Span xn = tape.x_at(p, k + 1);
        Span yn = tape.y_at(p, k + 1);
        for (int i = 0; i < n; ++i) {
          problem.sigma_row(i, tk, x[i], Span{sig_row});
          double acc = 0.0;
          for (int l = 0; l < d; ++l) acc += sig_row[l] * dw[l];
          xn[i] = x[i] + bvec[i] * dt + acc;
        }
        for (int j = 0; j < m; ++j) {
          double acc = 0.0;
          for (int l = 0; l < d; ++l) acc += z[j * d + l] * dw[l];
          yn[j] = y[j] - fvec[j] * dt + acc;
        }
        if (!detail::all_finite(xn) || !detail::all_finite(yn)) {
          if (chunk_fail_path[c] < 0) {
            chunk_fail_path[c] = p;
            chunk_fail_step[c] = k + 1;
          }
          dead = true;
        }
      }
      if (dead) continue;
      CSpan xT = tape.x_at(p, N);
      CSpan yT = tape.y_at(p, N);
      problem.terminal(xT, Span{gv});
      double err = 0.0;
      for (int j = 0; j < m; ++j) {
        const double e = gv[j] - yT[j];
        err += e * e;
      }
      report.terminal_sq_error[static_cast<std::size_t>(p)] = err;
      chunk_loss[static_cast<std::size_t>(c)] += err;
    }
  });

  for (long c = 0; c < nchunks; ++c) {
    if (chunk_fail_path[static_cast<std::size_t>(c)] >= 0 && !report.diverged) {
      report.diverged = true;
      report.fail_path = chunk_fail_path[static_cast<std::size_t>(c)];
      report.fail_step = chunk_fail_step[static_cast<std::size_t>(c)];
    }
  }
  double total = 0.0;
  for (long c = 0; c < nchunks; ++c) total += chunk_loss[static_cast<std::size_t>(c)];
  report.loss = report.diverged ? std::numeric_limits<double>::quiet_NaN() : total / M;
  return report;
}

// Exact reverse-mode gradient of the batch loss with respect to alpha and
// every network weight, propagated through both the Y- and X-recursions
// (the system is coupled: b may depend on Y, and Y on the parameters).
// Per-path adjoints accumulate into per-chunk buffers which are summed in
// chunk order.
inline GradReport backward(const FbsdeProblem& problem, const NetParams& params,
                           const RolloutTape& tape) {
  if (tape.batch == nullptr) throw std::invalid_argument("backward: tape has no batch");
  if (!(params.shape == tape.shape)) throw std::invalid_argument("backward: params/tape mismatch");
  const PathBatch& batch = *tape.batch;
  const long M = tape.M;
  const int N = tape.N, n = problem.n, m = problem.m, d = problem.d;
  const double dt = tape.dt, T = problem.T;
  const double w = 1.0 / static_cast<double>(M);
  const std::size_t psize = params.shape.size();

  const long nchunks = detail::num_chunks(M);
  std::vector<std::vector<double>> chunk_grad(static_cast<std::size_t>(nchunks));
  std::vector<long> chunk_fail_path(static_cast<std::size_t>(nchunks), -1);
  std::vector<int> chunk_fail_step(static_cast<std::size_t>(nchunks), -1);

  detail::parallel_chunks(M, [&](long c, long begin, long end) {
    std::vector<double>& grad = chunk_grad[static_cast<std::size_t>(c)];
    grad.assign(psize, 0.0);
    std::vector<double> in_buf(static_cast<std::size_t>(n + 1));
    std::vector<double> u_buf(static_cast<std::size_t>(params.shape.width()));
    std::vector<double> v_buf(static_cast<std::size_t>(params.shape.width()));
    std::vector<double> gv(static_cast<std::size_t>(m));
    std::vector<double> lam_term(static_cast<std::size_t>(m));
    std::vector<double> lamx(static_cast<std::size_t>(n)), lamx_new(static_cast<std::size_t>(n));
    std::vector<double> lamy(static_cast<std::size_t>(m)), lamy_new(static_cast<std::size_t>(m));
    std::vector<double> lamz(static_cast<std::size_t>(m) * d);
    std::vector<double> lamx_net(static_cast<std::size_t>(n));
    std::vector<double> tmp_md(static_cast<std::size_t>(m) * d);
    std::vector<double> tmp_m(static_cast<std::size_t>(m)), tmp_m2(static_cast<std::size_t>(m));
    std::vector<double> tmp_n(static_cast<std::size_t>(n)), tmp_n2(static_cast<std::size_t>(n));
    std::vector<double> sig_row(static_cast<std::size_t>(d));

    for (long p = begin; p < end; ++p) {
      CSpan xT = tape.x_at(p, N);
      CSpan yT = tape.y_at(p, N);
      problem.terminal(xT, Span{gv});
      for (int j = 0; j < m; ++j) lam_term[j] = 2.0 * w * (gv[j] - yT[j]);
      problem.terminal_vjp(xT, CSpan{lam_term}, Span{lamx});
      for (int j = 0; j < m; ++j) lamy[j] = -lam_term[j];

      bool dead = false;
      for (int k = N - 1; k >= 0 && !dead; --k) {
        const double tk = k * dt;
        CSpan x = tape.x_at(p, k);
        CSpan y = tape.y_at(p, k);
        CSpan z = tape.z_at(p, k);
        CSpan dw = batch.step_slice(p, k);

        // dY_{k+1}/dZ_k = -dt df/dz + dW outer identity
        problem.driver_vjp_z(tk, x, y, z, CSpan{lamy}, Span{tmp_md});
        for (int j = 0; j < m; ++j)
          for (int l = 0; l < d; ++l) lamz[j * d + l] = lamy[j] * dw[l] - dt * tmp_md[j * d + l];

        backward_eval(params, tk / T, x, tape.h1_at(p, k), tape.h2_at(p, k), CSpan{lamz},
                      Span{grad}, Span{lamx_net}, Span{in_buf}, Span{u_buf}, Span{v_buf});

        problem.driver_vjp_y(tk, x, y, z, CSpan{lamy}, Span{tmp_m});
        problem.drift_vjp_y(tk, x, y, CSpan{lamx}, Span{tmp_m2});
        for (int j = 0; j < m; ++j) lamy_new[j] = lamy[j] - dt * tmp_m[j] + dt * tmp_m2[j];

        problem.drift_vjp_x(tk, x, y, CSpan{lamx}, Span{tmp_n});
        problem.driver_vjp_x(tk, x, y, z, CSpan{lamy}, Span{tmp_n2});
        for (int i = 0; i < n; ++i) {
          problem.sigma_row_dx(i, tk, x[i], Span{sig_row});
          double sdot = 0.0;
          for (int l = 0; l < d; ++l) sdot += sig_row[l] * dw[l];
          lamx_new[i] = lamx[i] + dt * tmp_n[i] + sdot * lamx[i] - dt * tmp_n2[i] + lamx_net[i];
        }
        lamx.swap(lamx_new);
        lamy.swap(lamy_new);
        if (!detail::all_finite(CSpan{lamx}) || !detail::all_finite(CSpan{lamy})) {
          if (chunk_fail_path[c] < 0) {
            chunk_fail_path[c] = p;
            chunk_fail_step[c] = k;
          }
          dead = true;
        }
      }
      if (dead) continue;
      // after step 0 the Y-adjoint is exactly dL/d(alpha)
      for (int j = 0; j < m; ++j) grad[params.shape.alpha_off() + j] += lamy[j];
    }
  });

  GradReport out;
  out.grad.assign(psize, 0.0);
  for (long c = 0; c < nchunks; ++c) {
    const std::vector<double>& g = chunk_grad[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < psize; ++i) out.grad[i] += g[i];
    if (chunk_fail_path[static_cast<std::size_t>(c)] >= 0 && out.ok) {
      out.ok = false;
      out.fail_path = chunk_fail_path[static_cast<std::size_t>(c)];
      out.fail_step = chunk_fail_step[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

// Smallest forward-state component seen anywhere in the tape; used to
// confirm that a batch kept clear of the square-root truncation kink.
inline double tape_min_x(const RolloutTape& tape) {
  double lo = std::numeric_limits<double>::infinity();
  for (double v : tape.X) lo = std::min(lo, v);
  return lo;
}

// Rollout of the same recursion under an arbitrary control policy
//   policy(k, t_k, x, z_out)
// instead of the network; returns the batch loss. Used to evaluate
// reference controls such as the analytic decoupling field.
template <class Policy>
inline double simulate_control(const FbsdeProblem& problem, CSpan y0, const PathBatch& batch,
                               Policy&& policy) {
  problem.validate();
  if (batch.d != problem.d) throw std::invalid_argument("simulate_control: batch mismatch");
  const long M = batch.M;
  const int N = batch.N, n = problem.n, m = problem.m, d = problem.d;
  const double dt = batch.dt;

  std::vector<double> x(static_cast<std::size_t>(n)), xn(static_cast<std::size_t>(n));
  std::vector<double> y(static_cast<std::size_t>(m));
  std::vector<double> z(static_cast<std::size_t>(m) * d);
  std::vector<double> bvec(static_cast<std::size_t>(n)), fvec(static_cast<std::size_t>(m));
  std::vector<double> sig_row(static_cast<std::size_t>(d)), gv(static_cast<std::size_t>(m));

  double total = 0.0;
  for (long p = 0; p < M; ++p) {
    std::copy(problem.x0.begin(), problem.x0.end(), x.begin());
    std::copy(y0.begin(), y0.end(), y.begin());
    for (int k = 0; k < N; ++k) {
      const double tk = k * dt;
      policy(k, tk, CSpan{x}, Span{z});
      problem.drift(tk, CSpan{x}, CSpan{y}, Span{bvec});
      problem.driver(tk, CSpan{x}, CSpan{y}, CSpan{z}, Span{fvec});
      CSpan dw = batch.step_slice(p, k);
      for (int i = 0; i < n; ++i) {
        problem.sigma_row(i, tk, x[i], Span{sig_row});
        double acc = 0.0;
        for (int l = 0; l < d; ++l) acc += sig_row[l] * dw[l];
        xn[i] = x[i] + bvec[i] * dt + acc;
      }
      for (int j = 0; j < m; ++j) {
        double acc = 0.0;
        for (int l = 0; l < d; ++l) acc += z[j * d + l] * dw[l];
        y[j] = y[j] - fvec[j] * dt + acc;
      }
      x.swap(xn);
    }
    problem.terminal(CSpan{x}, Span{gv});
    for (int j = 0; j < m; ++j) {
      const double e = gv[j] - y[j];
      total += e * e;
    }
  }
  return total / static_cast<double>(M);
}

}  // namespace deepbsde
