#pragma once

#include <cstddef>
#include <functional>

namespace afldm {

// Worker count: AFLDM_THREADS if set (>= 1), else the hardware concurrency.
std::size_t worker_threads();

// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Each index
// runs exactly once; the first exception is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace afldm
