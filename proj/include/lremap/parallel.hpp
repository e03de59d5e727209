#pragma once

#include <cstddef>
#include <functional>

namespace lremap {

// Worker cap: LATENT_REMAP_THREADS when set (>= 1), otherwise the hardware
// concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n), split into contiguous chunks across workers. Callers
// write results into per-index slots and reduce them afterwards in index order,
// so outputs never depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lremap
