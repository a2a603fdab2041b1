#pragma once

#include <cstddef>
#include <functional>

namespace diffsos {

/// Worker cap: DIFFSOS_THREADS if set to a positive integer, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Exceptions from
/// workers are rethrown (first one wins) after all workers have joined.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace diffsos
