#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "deepbsde/counter_rng.hpp"

namespace deepbsde {

// Batch of Brownian increments dW_k ~ N(0, dt) for M paths, N steps and
// d coordinates, laid out as increments[(p*N + k)*d + l].
struct PathBatch {
  long M = 0;
  int N = 0;
  int d = 0;
  double dt = 0.0;
  std::vector<double> increments;

  double at(long path, int step, int coord) const {
    return increments[(static_cast<std::size_t>(path) * N + step) * d + coord];
  }
  std::span<const double> step_slice(long path, int step) const {
    return {increments.data() + (static_cast<std::size_t>(path) * N + step) * d,
            static_cast<std::size_t>(d)};
  }
};

// Draw index of increment (path, step, coord) inside one iteration stream.
inline std::uint64_t increment_index(long path, int step, int coord, int N, int d) {
  return (static_cast<std::uint64_t>(path) * N + static_cast<std::uint64_t>(step)) * d +
         static_cast<std::uint64_t>(coord);
}

// Generates the increment batch for one training iteration. The value of
// increment (path, step, coord) depends only on (seed, iteration, path,
// step, coord), never on how the fill is scheduled.
inline PathBatch generate(std::uint64_t seed, std::uint64_t iteration, long M, int N, int d,
                          double T) {
  if (M < 1 || N < 1 || d < 1) throw std::invalid_argument("paths: M, N, d must be >= 1");
  if (!(T > 0.0)) throw std::invalid_argument("paths: T must be positive");

  PathBatch batch;
  batch.M = M;
  batch.N = N;
  batch.d = d;
  batch.dt = T / N;
  batch.increments.resize(static_cast<std::size_t>(M) * N * d);

  const double scale = std::sqrt(batch.dt);
  const std::int64_t total = static_cast<std::int64_t>(M) * N * d;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < total; ++i) {
    batch.increments[static_cast<std::size_t>(i)] =
        scale * rng::normal(seed, iteration, static_cast<std::uint64_t>(i));
  }
  return batch;
}

}  // namespace deepbsde
