#pragma once

#include <cstddef>
#include <functional>

namespace voxharm {

/// Worker count used when a call passes threads == 0. Initialised from
/// VOXHARM_THREADS, falling back to the hardware concurrency.
unsigned default_threads() noexcept;
void set_default_threads(unsigned threads) noexcept;

/// Runs fn(i) for every i in [0, count). Items are independent; callers that
/// reduce results do so afterwards in index order, so output never depends on
/// the thread count. If several items throw, the exception of the lowest
/// index is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn,
                  unsigned threads = 0);

}  // namespace voxharm
