#pragma once
// Worker-count plumbing. Work is always split into the same fixed chunks and
// combined in chunk order, so results are identical for any worker count.

#include <cstddef>
#include <functional>

namespace mbmard {

// Process-wide default worker count; the CLI sets it from MBMARD_THREADS or
// a flag. Values below 1 are clamped to 1.
void set_thread_count(int n);
int thread_count();

// Runs fn(chunk_index) for chunk_index in [0, chunks) on up to `workers`
// threads (0 = the process default). fn must only touch per-chunk state.
void parallel_chunks(int chunks, const std::function<void(int)>& fn, int workers = 0);

}  // namespace mbmard
