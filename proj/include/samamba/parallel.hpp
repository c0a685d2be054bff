#pragma once

#include <cstddef>
#include <functional>

namespace samamba {

/// Worker count used by kernels. Defaults to the SAMAMBA_THREADS environment
/// variable, falling back to the hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Splits [0, n) into contiguous chunks, one per worker. Each index is handled
/// by exactly one worker, so per-element reduction order never depends on the
/// worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk = 1);

}  // namespace samamba
