#pragma once

#include <cstddef>
#include <functional>

namespace nucleiquant {

// NUCLEIQUANT_THREADS when set to a positive integer, else the hardware
// concurrency (at least 1).
std::size_t worker_count();

// Calls fn(i) for i in [0, n) over up to `workers` threads. Each index is
// visited exactly once; callers write results to pre-sized slots so output
// order never depends on scheduling.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace nucleiquant
