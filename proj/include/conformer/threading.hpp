#pragma once

#include <cstdint>
#include <functional>

namespace conformer {

// Number of worker threads. Read once from CONFORMER_THREADS, defaults to the
// hardware concurrency. Always at least 1.
int num_threads();

// Splits [begin, end) into at most num_threads() contiguous chunks and runs
// fn(chunk_begin, chunk_end) on each. Partitioning depends only on the range
// and the thread count, and every output element is produced by exactly one
// chunk, so results are bit-identical for any thread count as long as fn
// writes disjoint outputs with a fixed per-element reduction order.
//
// Ranges smaller than min_grain stay on the calling thread.
void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int64_t)>& fn,
                  int64_t min_grain = 1024);

}  // namespace conformer
