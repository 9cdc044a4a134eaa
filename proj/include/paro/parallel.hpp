#pragma once

#include <cstddef>
#include <functional>

namespace paro {

/// Worker count: set_thread_count() if called, else $PQT_THREADS, else hardware concurrency.
std::size_t thread_count() noexcept;
void set_thread_count(std::size_t n) noexcept;  // 0 restores the default

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks are fixed by
/// (n, threads), never by timing, so per-index work is deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace paro
