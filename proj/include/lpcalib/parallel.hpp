#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lpcalib {

/// Runs fn(begin, end) over fixed-size blocks of [0, n). Block boundaries depend
/// only on n and block_size, never on the thread count, so per-block partial
/// results combined in block order are identical for any number of threads.
template <typename F>
void parallel_blocks(std::size_t n, std::size_t block_size, int threads, F&& fn) {
    if (n == 0) return;
    block_size = std::max<std::size_t>(block_size, 1);
    const std::size_t blocks = (n + block_size - 1) / block_size;
    const auto run_block = [&](std::size_t b) { fn(b * block_size, std::min(n, (b + 1) * block_size)); };
    const std::size_t workers = std::min<std::size_t>(blocks, static_cast<std::size_t>(std::max(threads, 1)));
    if (workers <= 1) {
        for (std::size_t b = 0; b < blocks; ++b) run_block(b);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t b = w; b < blocks; b += workers) run_block(b);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// fn(i) for every i in [0, n).
template <typename F>
void parallel_for(std::size_t n, int threads, F&& fn) {
    parallel_blocks(n, std::max<std::size_t>(1, n / (8 * static_cast<std::size_t>(std::max(threads, 1)))),
                    threads, [&](std::size_t begin, std::size_t end) {
                        for (std::size_t i = begin; i < end; ++i) fn(i);
                    });
}

}  // namespace lpcalib
