#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace deepbsde {

// Counter-based random number generation (Philox4x32-10).
//
// Every draw is a pure function of (seed, stream, index): no generator
// state exists, so any sub-range of draws can be produced on any worker
// in any order with identical results. Streams partition the counter
// space; within a run, training iteration k uses stream k (k >= 1), and
// the reserved streams below never collide with iteration indices.
//
// Normal variates use the Box-Muller transform (cosine branch) on the
// two 64-bit uniforms produced by one Philox block. The method is fixed:
// changing it changes every sampled path, so it is part of the on-disk
// reproducibility contract.

namespace rng {

// Reserved stream ids, outside the range of training iterations.
inline constexpr std::uint64_t kInitStream = 0xFFFFFFFFFFFFFFFFull;   // network init
inline constexpr std::uint64_t kParamStream = 0xFFFFFFFFFFFFFFFEull;  // model parameter sampling

struct Block {
  std::uint32_t w[4];
};

namespace detail {

inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void round_once(std::uint32_t c[4], const std::uint32_t k[2]) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
  const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
  const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
  const std::uint32_t n0 = hi1 ^ c[1] ^ k[0];
  const std::uint32_t n1 = lo1;
  const std::uint32_t n2 = hi0 ^ c[3] ^ k[1];
  const std::uint32_t n3 = lo0;
  c[0] = n0;
  c[1] = n1;
  c[2] = n2;
  c[3] = n3;
}

}  // namespace detail

// One 128-bit Philox4x32-10 block for the given (seed, stream, index).
inline Block philox(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint32_t c[4] = {
      static_cast<std::uint32_t>(index),
      static_cast<std::uint32_t>(index >> 32),
      static_cast<std::uint32_t>(stream),
      static_cast<std::uint32_t>(stream >> 32),
  };
  std::uint32_t k[2] = {
      static_cast<std::uint32_t>(seed),
      static_cast<std::uint32_t>(seed >> 32),
  };
  for (int r = 0; r < 10; ++r) {
    if (r > 0) {
      k[0] += detail::kWeyl0;
      k[1] += detail::kWeyl1;
    }
    detail::round_once(c, k);
  }
  return Block{{c[0], c[1], c[2], c[3]}};
}

// Maps 64 bits to the open interval (0, 1); never returns 0 or 1, so it
// is safe under log().
inline double to_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Uniform draw on (0, 1) at counter (seed, stream, index).
inline double uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const Block blk = philox(seed, stream, index);
  const std::uint64_t bits =
      (static_cast<std::uint64_t>(blk.w[0]) << 32) | blk.w[1];
  return to_unit(bits);
}

// Standard normal draw at counter (seed, stream, index):
//   z = sqrt(-2 ln u1) * cos(2 pi u2)
// with (u1, u2) the two uniforms of one Philox block.
inline double normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const Block blk = philox(seed, stream, index);
  const std::uint64_t b0 =
      (static_cast<std::uint64_t>(blk.w[0]) << 32) | blk.w[1];
  const std::uint64_t b1 =
      (static_cast<std::uint64_t>(blk.w[2]) << 32) | blk.w[3];
  const double u1 = to_unit(b0);
  const double u2 = to_unit(b1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace rng
}  // namespace deepbsde
