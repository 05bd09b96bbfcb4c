#pragma once

#include <cstdint>
#include <functional>

namespace attenlab {

// Number of worker threads the process-wide pool uses. Defaults to the
// hardware concurrency, capped by the ATTENLAB_THREADS environment variable.
int worker_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous index ranges, so
// results are identical to the serial loop whenever each index writes only to
// its own outputs. Falls back to the calling thread for small n or when the
// pool has a single worker.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

// Range flavour: fn(begin, end) over contiguous chunks.
void parallel_for_ranges(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace attenlab
