#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepbsde/counter_rng.hpp"
#include "deepbsde/fbsde.hpp"

namespace deepbsde {

// The Z-approximator: a feedforward net
//   z = W3 relu(W2 relu(W1 [t/T; x] + b1) + b2) + b3
// with two hidden layers of width n+10, output reshaped to m x d.
//
// All trainables live in one flat buffer,
//   alpha | W1 | b1 | W2 | b2 | W3 | b3
// (matrices row-major, rows = output units), so the optimizer, the
// finite-difference harness and serialization all address parameters by
// a single flat index. alpha is the trainable initial value of Y.
struct NetShape {
  int n = 1, m = 1, d = 1;

  int input() const { return n + 1; }
  int width() const { return n + 10; }
  int output() const { return m * d; }

  std::size_t alpha_off() const { return 0; }
  std::size_t w1_off() const { return static_cast<std::size_t>(m); }
  std::size_t b1_off() const { return w1_off() + static_cast<std::size_t>(width()) * input(); }
  std::size_t w2_off() const { return b1_off() + width(); }
  std::size_t b2_off() const { return w2_off() + static_cast<std::size_t>(width()) * width(); }
  std::size_t w3_off() const { return b2_off() + width(); }
  std::size_t b3_off() const { return w3_off() + static_cast<std::size_t>(output()) * width(); }
  std::size_t size() const { return b3_off() + output(); }

  bool operator==(const NetShape&) const = default;
};

struct NetParams {
  NetShape shape;
  std::vector<double> data;

  Span alpha() { return {data.data() + shape.alpha_off(), static_cast<std::size_t>(shape.m)}; }
  CSpan alpha() const {
    return {data.data() + shape.alpha_off(), static_cast<std::size_t>(shape.m)};
  }
};

// Uniform initialization: alpha ~ U[0,1]^m and each weight uniform on the
// symmetric interval +-sqrt(6/(fan_in+fan_out)); biases start at zero.
// Draw i of the init stream feeds flat position i of (alpha, W1, W2, W3),
// so the result depends on the seed alone.
inline NetParams init_params(std::uint64_t seed, int n, int m, int d) {
  if (n < 1 || m < 1 || d < 1) throw std::invalid_argument("init_params: dims must be >= 1");
  NetParams p;
  p.shape = NetShape{n, m, d};
  p.data.assign(p.shape.size(), 0.0);

  std::uint64_t idx = 0;
  auto unit = [&] { return rng::uniform(seed, rng::kInitStream, idx++); };

  for (int j = 0; j < m; ++j) p.data[p.shape.alpha_off() + j] = unit();
  auto fill_uniform = [&](std::size_t off, std::size_t count, int fan_in, int fan_out) {
    const double r = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < count; ++i) p.data[off + i] = r * (2.0 * unit() - 1.0);
  };
  const NetShape& s = p.shape;
  fill_uniform(s.w1_off(), static_cast<std::size_t>(s.width()) * s.input(), s.input(), s.width());
  fill_uniform(s.w2_off(), static_cast<std::size_t>(s.width()) * s.width(), s.width(), s.width());
  fill_uniform(s.w3_off(), static_cast<std::size_t>(s.output()) * s.width(), s.width(), s.output());
  return p;
}

// Forward pass writing pre-activations h1, h2 (needed by the reverse
// pass) and the m*d output into caller buffers. in_buf is scratch of
// length n+1; t_norm is t/T.
inline void forward_eval(const NetParams& p, double t_norm, CSpan x, Span h1, Span h2, Span z,
                         Span in_buf) {
  const NetShape& s = p.shape;
  const int ni = s.input(), w = s.width(), no = s.output();
  in_buf[0] = t_norm;
  for (int j = 1; j < ni; ++j) in_buf[j] = x[j - 1];

  const double* W1 = p.data.data() + s.w1_off();
  const double* b1 = p.data.data() + s.b1_off();
  for (int u = 0; u < w; ++u) {
    double acc = b1[u];
    const double* row = W1 + static_cast<std::size_t>(u) * ni;
    for (int j = 0; j < ni; ++j) acc += row[j] * in_buf[j];
    h1[u] = acc;
  }
  const double* W2 = p.data.data() + s.w2_off();
  const double* b2 = p.data.data() + s.b2_off();
  for (int u = 0; u < w; ++u) {
    double acc = b2[u];
    const double* row = W2 + static_cast<std::size_t>(u) * w;
    for (int v = 0; v < w; ++v) acc += row[v] * (h1[v] > 0.0 ? h1[v] : 0.0);
    h2[u] = acc;
  }
  const double* W3 = p.data.data() + s.w3_off();
  const double* b3 = p.data.data() + s.b3_off();
  for (int o = 0; o < no; ++o) {
    double acc = b3[o];
    const double* row = W3 + static_cast<std::size_t>(o) * w;
    for (int u = 0; u < w; ++u) acc += row[u] * (h2[u] > 0.0 ? h2[u] : 0.0);
    z[o] = acc;
  }
}

// Convenience forward returning the full activation record.
struct NetEval {
  std::vector<double> z;   // m*d
  std::vector<double> h1;  // width
  std::vector<double> h2;  // width
};

inline NetEval forward(const NetParams& p, double t, double T, CSpan x) {
  NetEval e;
  e.z.resize(static_cast<std::size_t>(p.shape.output()));
  e.h1.resize(static_cast<std::size_t>(p.shape.width()));
  e.h2.resize(static_cast<std::size_t>(p.shape.width()));
  std::vector<double> in_buf(static_cast<std::size_t>(p.shape.input()));
  forward_eval(p, T > 0.0 ? t / T : t, x, Span{e.h1}, Span{e.h2}, Span{e.z}, Span{in_buf});
  return e;
}

// Reverse pass of one evaluation: given the output adjoint lam_z,
// accumulates parameter gradients into grad (flat layout, += semantics)
// and writes the input-state adjoint into lam_x. h1, h2 are the stored
// pre-activations; buffers u_buf, v_buf, in_buf are scratch of length
// width, width, n+1. ReLU adopts derivative 0 at exactly 0.
inline void backward_eval(const NetParams& p, double t_norm, CSpan x, CSpan h1, CSpan h2,
                          CSpan lam_z, Span grad, Span lam_x, Span in_buf, Span u_buf,
                          Span v_buf) {
  const NetShape& s = p.shape;
  const int ni = s.input(), w = s.width(), no = s.output();
  in_buf[0] = t_norm;
  for (int j = 1; j < ni; ++j) in_buf[j] = x[j - 1];

  const double* W3 = p.data.data() + s.w3_off();
  double* gW3 = grad.data() + s.w3_off();
  double* gb3 = grad.data() + s.b3_off();
  for (int u = 0; u < w; ++u) u_buf[u] = 0.0;
  for (int o = 0; o < no; ++o) {
    const double lz = lam_z[o];
    const double* row = W3 + static_cast<std::size_t>(o) * w;
    double* grow = gW3 + static_cast<std::size_t>(o) * w;
    for (int u = 0; u < w; ++u) {
      grow[u] += lz * (h2[u] > 0.0 ? h2[u] : 0.0);
      u_buf[u] += row[u] * lz;
    }
    gb3[o] += lz;
  }
  // u_buf now holds d(loss)/d(a2); mask to pre-activation adjoint
  for (int u = 0; u < w; ++u) u_buf[u] = h2[u] > 0.0 ? u_buf[u] : 0.0;

  const double* W2 = p.data.data() + s.w2_off();
  double* gW2 = grad.data() + s.w2_off();
  double* gb2 = grad.data() + s.b2_off();
  for (int v = 0; v < w; ++v) v_buf[v] = 0.0;
  for (int u = 0; u < w; ++u) {
    const double lh = u_buf[u];
    gb2[u] += lh;
    const double* row = W2 + static_cast<std::size_t>(u) * w;
    double* grow = gW2 + static_cast<std::size_t>(u) * w;
    if (lh != 0.0) {
      for (int v = 0; v < w; ++v) {
        grow[v] += lh * (h1[v] > 0.0 ? h1[v] : 0.0);
        v_buf[v] += row[v] * lh;
      }
    }
  }
  for (int v = 0; v < w; ++v) v_buf[v] = h1[v] > 0.0 ? v_buf[v] : 0.0;

  const double* W1 = p.data.data() + s.w1_off();
  double* gW1 = grad.data() + s.w1_off();
  double* gb1 = grad.data() + s.b1_off();
  for (int j = 0; j < static_cast<int>(lam_x.size()); ++j) lam_x[j] = 0.0;
  for (int u = 0; u < w; ++u) {
    const double lh = v_buf[u];
    gb1[u] += lh;
    const double* row = W1 + static_cast<std::size_t>(u) * ni;
    double* grow = gW1 + static_cast<std::size_t>(u) * ni;
    if (lh != 0.0) {
      grow[0] += lh * in_buf[0];
      for (int j = 1; j < ni; ++j) {
        grow[j] += lh * in_buf[j];
        lam_x[j - 1] += row[j] * lh;
      }
    }
  }
}

// Adam over the flat parameter vector, standard bias-corrected form.
struct AdamState {
  long step = 0;
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m1;
  std::vector<double> m2;

  static AdamState make(const NetShape& shape, double lr, double beta1, double beta2,
                        double eps) {
    AdamState s;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.m1.assign(shape.size(), 0.0);
    s.m2.assign(shape.size(), 0.0);
    return s;
  }
};

// One Adam update in place. Returns false (divergence signal) if any
// updated parameter is non-finite; the caller owns recovery, typically
// by restoring a snapshot.
inline bool adam_step(NetParams& params, AdamState& state, CSpan grads) {
  if (grads.size() != params.data.size() || state.m1.size() != params.data.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  bool ok = true;
  for (std::size_t i = 0; i < params.data.size(); ++i) {
    const double g = grads[i];
    state.m1[i] = state.beta1 * state.m1[i] + (1.0 - state.beta1) * g;
    state.m2[i] = state.beta2 * state.m2[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m1[i] / c1;
    const double vhat = state.m2[i] / c2;
    params.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    if (!std::isfinite(params.data[i])) ok = false;
  }
  return ok;
}

// Flat binary snapshot: "DBSDE001", int32 n/m/d, uint64 count, then the
// raw little-endian doubles in flat layout order.
inline void save_params(const NetParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot open " + path);
  const char magic[8] = {'D', 'B', 'S', 'D', 'E', '0', '0', '1'};
  out.write(magic, 8);
  const std::int32_t dims[3] = {p.shape.n, p.shape.m, p.shape.d};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  const std::uint64_t count = p.data.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(p.data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

inline NetParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "DBSDE001", 8) != 0)
    throw std::runtime_error("load_params: bad header in " + path);
  std::int32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  NetParams p;
  p.shape = NetShape{dims[0], dims[1], dims[2]};
  if (!in || count != p.shape.size()) throw std::runtime_error("load_params: bad size in " + path);
  p.data.resize(count);
  in.read(reinterpret_cast<char*>(p.data.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("load_params: truncated file " + path);
  return p;
}

}  // namespace deepbsde
