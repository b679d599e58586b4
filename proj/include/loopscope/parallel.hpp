#pragma once

#include <cstddef>
#include <functional>

namespace loopscope {

/// Worker count from LOOPSCOPE_WORKERS, falling back to hardware concurrency.
std::size_t default_workers();

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
/// visited exactly once; callers write results into per-index slots so the
/// reduction order stays fixed. The first exception thrown is rethrown.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace loopscope
