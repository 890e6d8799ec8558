#include "grcn/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace grcn {

int max_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("GRCN_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
      return 1;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
  }();
  return cached;
}

namespace {
thread_local bool inside_parallel_region = false;
}

void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (n <= 0) return;
  const int workers = std::min<std::int64_t>(max_threads(), n);
  // Nested calls run inline: the outer loop already owns the workers.
  if (workers <= 1 || n < 2 || inside_parallel_region) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min<std::int64_t>(lo + chunk, n);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] {
      inside_parallel_region = true;
      body(lo, hi);
      inside_parallel_region = false;
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace grcn
