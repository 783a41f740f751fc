#pragma once

#include <cstddef>
#include <functional>

namespace cvcs {

/// Worker cap: CVCS_THREADS when set and positive, else hardware concurrency.
int max_threads();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index runs
/// exactly once; the first exception thrown is rethrown after all workers join.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace cvcs
