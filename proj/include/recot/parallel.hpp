#pragma once

#include <cstddef>
#include <functional>

namespace recot {

// Worker count: RECOT_THREADS if set (>= 1), else hardware concurrency.
std::size_t worker_count();

// Calls fn(i) for i in [0, n) across worker_count() threads. Callers write
// results into slot i, so output order never depends on scheduling. The first
// exception thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace recot
