#pragma once

// Counter-style seed derivation. Every random draw in the project comes from
// a generator seeded by derive_seed(run_seed, purpose, ...), so results do not
// depend on evaluation order and a resumed run sees the same stream.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include "luvit/tensor.hpp"

namespace luvit {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

/// Uniform in [0, 1) with 53 random bits; independent of the standard library's distributions.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Standard normal via Box-Muller over uniform01.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) { return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n)) % n; }

/// Fisher-Yates shuffle driven by uniform_index.
template <typename It>
void shuffle_range(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) std::swap(first[i - 1], first[uniform_index(rng, i)]);
}

template <typename S>
void fill_normal(Buffer<S>& b, double stddev, Rng& rng) {
  for (Index i = 0; i < b.size(); ++i) b[i] = static_cast<S>(stddev * standard_normal(rng));
}

/// Normal(0, stddev) truncated to [-2 stddev, 2 stddev] by resampling.
template <typename S>
void fill_trunc_normal(Buffer<S>& b, double stddev, Rng& rng) {
  for (Index i = 0; i < b.size(); ++i) {
    double v = standard_normal(rng);
    while (v < -2.0 || v > 2.0) v = standard_normal(rng);
    b[i] = static_cast<S>(stddev * v);
  }
}

}  // namespace luvit
