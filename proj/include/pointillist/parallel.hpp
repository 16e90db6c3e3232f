#pragma once

#include <cstddef>
#include <functional>

namespace pointillist {

/// Worker count: `requested` when positive, else POINTILLIST_THREADS, else the
/// hardware concurrency (at least 1).
int worker_count(int requested = 0);

/// Runs body(i) for i in [0, n) on up to `workers` threads. Each index runs
/// exactly once; callers write results into per-index slots so the outcome
/// does not depend on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body);

}  // namespace pointillist
