#pragma once

#include <cstddef>
#include <functional>

namespace divscan {

/// Worker count for data-parallel loops. Controlled by the DIVSCAN_THREADS
/// environment variable; 0 or unset means hardware concurrency.
std::size_t worker_count();

/// Runs f(i) for i in [0, n). Work items must be independent; callers that
/// need ordered results should write into a preallocated slot per index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f);

} // namespace divscan
