#pragma once

#include <cstddef>
#include <functional>

namespace pivotal {

/// Worker count from PIVOTAL_THREADS, else hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs body(i) for i in [0, count) on a small pool. Results must be written
/// to per-index slots by the caller so reductions stay order independent.
/// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace pivotal
