#pragma once

#include <cstdint>
#include <functional>

namespace advkit {

/// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = hardware
/// concurrency). Work items must be independent; each writes only its own
/// output slot, which keeps results identical to a sequential run.
void parallel_for(int64_t n, int workers, const std::function<void(int64_t)>& fn);

} // namespace advkit
