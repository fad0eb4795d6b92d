#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace fdseg {

/// Splits [begin, end) into `threads` contiguous chunks and runs fn(lo, hi)
/// on each. Chunks are disjoint so fn may write to disjoint output rows
/// without synchronization. The first exception thrown by a worker is
/// rethrown on the calling thread.
template <typename Fn>
void parallel_for(Eigen::Index begin, Eigen::Index end, int threads, Fn&& fn) {
  const Eigen::Index n = end - begin;
  if (n <= 0) return;
  const Eigen::Index workers = std::clamp<Eigen::Index>(threads, 1, n);
  if (workers == 1) {
    fn(begin, end);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (Eigen::Index t = 0; t < workers; ++t) {
      const Eigen::Index lo = begin + n * t / workers;
      const Eigen::Index hi = begin + n * (t + 1) / workers;
      pool.emplace_back([&fn, &errors, t, lo, hi] {
        try {
          fn(lo, hi);
        } catch (...) {
          errors[static_cast<std::size_t>(t)] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace fdseg
