#pragma once

#include <cstddef>
#include <functional>

namespace rwvrp {

/// Thread count used when callers pass 0.
std::size_t default_threads();

/// Runs fn(i, worker) for i in [0, n) on up to `threads` workers. Each index is
/// processed exactly once; results must be written to per-index slots so the
/// outcome never depends on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t, std::size_t)>& fn);

} // namespace rwvrp
