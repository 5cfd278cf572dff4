#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

namespace polymatch::detail {

// Worker count for elementwise kernels. POLYMATCH_THREADS overrides the
// hardware count; read once per process.
inline int thread_count() {
  static const int count = [] {
    if (const char* env = std::getenv("POLYMATCH_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return std::min(v, 256);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return count;
}

// Run fn(begin, end) over disjoint chunks of [0, n), possibly on worker
// threads. Only element-independent work goes through here (each index owns
// its output slot), so the result is identical for every thread count.
// Reductions stay serial with a fixed order; see sum.hpp.
template <class F>
void parallel_chunks(std::size_t n, F&& fn) {
  const int threads = thread_count();
  constexpr std::size_t kMinPerThread = 1 << 14;
  if (threads <= 1 || n < 2 * kMinPerThread) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t want = (n + kMinPerThread - 1) / kMinPerThread;
  const std::size_t used = std::min<std::size_t>(static_cast<std::size_t>(threads), want);
  const std::size_t chunk = (n + used - 1) / used;
  std::vector<std::thread> workers;
  workers.reserve(used - 1);
  for (std::size_t t = 1; t < used; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    workers.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
  for (auto& w : workers) w.join();
}

}  // namespace polymatch::detail
