#pragma once

#include <cstddef>
#include <functional>

namespace hte {

/// Process-wide cap on worker threads. Initialized from HTE_LAB_THREADS when
/// set, otherwise hardware concurrency. Results never depend on this value.
std::size_t max_threads();
void set_max_threads(std::size_t n);

/// Runs fn(i) for i in [0, n). Work items must be independent; callers write
/// results by index so the outcome is identical for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace hte
