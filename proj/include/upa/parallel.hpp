#pragma once

#include <cstddef>
#include <functional>

namespace upa {

// Worker count: UPA_THREADS when set (>= 1), otherwise hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) across worker_count() threads. Callers write
// results into per-index slots, so reduction order stays deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace upa
