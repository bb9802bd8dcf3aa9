#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace fusionshot::detail {

/// Worker count from FUSIONSHOT_THREADS, falling back to 1.
inline std::size_t env_threads() {
  if (const char* v = std::getenv("FUSIONSHOT_THREADS")) {
    try {
      long n = std::stol(v);
      if (n > 0) return static_cast<std::size_t>(n);
    } catch (...) {
    }
  }
  return 1;
}

/// Splits [0, count) into contiguous chunks and runs fn(begin, end) on each.
/// Callers write to disjoint output slots, so results do not depend on the
/// thread count.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  if (count == 0) return;
  threads = std::clamp<std::size_t>(threads, 1, count);
  if (threads == 1) {
    fn(std::size_t{0}, count);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (count + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    workers.emplace_back([&, t, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace fusionshot::detail
