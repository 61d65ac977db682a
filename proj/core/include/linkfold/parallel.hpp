#pragma once

#include <cstddef>
#include <functional>

namespace linkfold {

/// Worker count: LINKFOLD_THREADS when set to a positive integer, otherwise
/// (unset or 0) the hardware concurrency. Never less than 1.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) over contiguous blocks, one block per worker.
/// The caller writes results into pre-sized storage indexed by i, so the
/// outcome does not depend on the scheduling. The first exception thrown by
/// any worker (lowest index) is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t threads = 0);

}  // namespace linkfold
