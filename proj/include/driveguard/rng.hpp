#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "driveguard/tensor.hpp"

namespace driveguard {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Stream-independent child seed; per-item seeds come from item indices so
/// results never depend on processing order.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(base);
  for (std::uint64_t p : path) s = splitmix64(s ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return s;
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

template <typename T>
BasicTensor<T> random_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  BasicTensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
BasicTensor<T> random_normal(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  BasicTensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(mean, stddev);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace driveguard
