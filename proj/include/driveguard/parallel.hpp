#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace driveguard {

/// Intra-op thread cap: DRIVEGUARD_THREADS if set, else hardware concurrency.
inline std::size_t thread_count() {
  static const std::size_t count = [] {
    std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DRIVEGUARD_THREADS")) {
      try {
        const long requested = std::stol(env);
        if (requested > 0) return std::min<std::size_t>(static_cast<std::size_t>(requested), 256);
      } catch (...) {
      }
    }
    return hw;
  }();
  return count;
}

/// Runs fn(i) for i in [begin, end). Each index is handled by exactly one
/// thread, so results are independent of the thread count as long as fn
/// writes disjoint outputs.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, Fn&& fn, std::size_t min_per_thread = 1) {
  if (end <= begin) return;
  const std::size_t n = end - begin;
  const std::size_t workers = std::min(thread_count(), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_per_thread)));
  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (std::size_t i = begin; i < std::min(end, begin + chunk); ++i) fn(i);
}

}  // namespace driveguard
