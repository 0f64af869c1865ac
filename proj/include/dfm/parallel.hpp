#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace dfm {

/// Worker count used by parallel loops. 0 restores the default (hardware
/// concurrency, or DFM_THREADS when set).
void set_thread_count(int n);
int thread_count();

/// Runs `body(block, begin, end)` for every block of `block_size` consecutive
/// indices in [0, n). Blocks are independent; nested calls run serially on
/// the calling worker.
void parallel_for_blocks(std::size_t n, std::size_t block_size,
                         const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

/// Runs `body(i)` for i in [0, n), one task per index.
void parallel_for_each(std::size_t n, const std::function<void(std::size_t)>& body);

/// Pairwise sum of per-block partial vectors.
///
/// `body(block, begin, end, out)` fills `out` (length `width`, zeroed) for the
/// rows [begin, end). Partials are combined in a binary tree whose shape
/// depends only on the block count, so the result is bit-identical for any
/// thread count at a fixed block size.
std::vector<double> blocked_sum(
    std::size_t n, std::size_t block_size, std::size_t width,
    const std::function<void(std::size_t, std::size_t, std::size_t, std::span<double>)>& body);

inline constexpr std::size_t kDefaultBlockRows = 1024;

}  // namespace dfm
