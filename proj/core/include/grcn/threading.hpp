#ifndef GRCN_THREADING_HPP
#define GRCN_THREADING_HPP

#include <cstdint>
#include <functional>

namespace grcn {

// Worker cap: GRCN_THREADS if set (clamped to >= 1), otherwise
// hardware_concurrency. Read once per process.
int max_threads();

// Splits [0, n) into contiguous chunks, one worker per chunk. Each index is
// processed by exactly one worker, so writers to disjoint outputs need no
// synchronization and results do not depend on the thread count. Runs inline
// when n is small or only one worker is available.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace grcn

#endif  // GRCN_THREADING_HPP
