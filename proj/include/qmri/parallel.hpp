#pragma once
#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace qmri {

// Worker-thread budget. The QMRI_THREADS environment variable caps the
// data-parallel width; unset or invalid values fall back to the hardware
// concurrency.
inline int thread_budget() {
  unsigned hw = std::thread::hardware_concurrency();
  long n = hw ? static_cast<long>(hw) : 1;
  if (const char* env = std::getenv("QMRI_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) n = v;
  }
  return static_cast<int>(std::clamp(n, 1L, 256L));
}

// Chunked parallel loop over [0, n). The body must only touch disjoint
// state per index; results are independent of the thread count.
template <class F>
void parallel_for(std::ptrdiff_t n, F&& body, std::ptrdiff_t grain = 512) {
  if (n <= 0) return;
  const int workers = std::min<std::ptrdiff_t>(thread_budget(), (n + grain - 1) / grain);
  if (workers <= 1) {
    for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::ptrdiff_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::ptrdiff_t lo = w * chunk;
    const std::ptrdiff_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::ptrdiff_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace qmri
