#pragma once

#include <cstddef>
#include <functional>

namespace moelrc {

/// Worker count: `requested` if non-zero, else MOE_LRC_THREADS, else hardware concurrency.
unsigned resolve_threads(unsigned requested = 0);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
/// thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace moelrc
