#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace nilm {

/// Number of workers to use when the caller asks for `jobs` (0 = all cores).
inline int resolve_jobs(int jobs) {
  if (jobs > 0) return jobs;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(begin, end) over contiguous, disjoint chunks of [0, n).
/// The first exception thrown by any worker is rethrown on the caller.
template <typename Fn>
void parallel_chunks(std::size_t n, int jobs, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, resolve_jobs(jobs)));
  if (n == 0) return;
  if (workers == 1 || n == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t count = std::min(workers, n);
  const std::size_t chunk = (n + count - 1) / count;
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> threads;
  threads.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Element-wise parallel loop; fn(i) for each i in [0, n).
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  parallel_chunks(n, jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace nilm
