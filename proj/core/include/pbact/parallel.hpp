#pragma once

#include <cstddef>
#include <functional>

namespace pbact {

/// Runs job(i) for i in [0, n) across up to n_threads workers (0 = hardware
/// concurrency). Jobs must be independent; results should be written into
/// pre-sized slots so output identity does not depend on scheduling. The
/// lowest-index failure is rethrown after all workers finish.
void parallel_for(size_t n, int n_threads, const std::function<void(size_t)>& job);

}  // namespace pbact
