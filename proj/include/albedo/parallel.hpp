// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace albedo {

/// Worker count used by parallel_for; 0 means hardware concurrency.
void set_thread_count(int threads);
int thread_count();

/// Calls f(i) for i in [0, n). Work is claimed in chunks from an atomic counter, so callers
/// must write results into index-addressed slots to stay independent of the schedule.
template <class F>
void parallel_for(std::size_t n, F&& f, std::size_t chunk = 1) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()),
                                                      (n + chunk - 1) / std::max<std::size_t>(chunk, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            f(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            const std::size_t begin = next.fetch_add(chunk);
            if (begin >= n) {
                return;
            }
            const std::size_t end = std::min(n, begin + chunk);
            try {
                for (std::size_t i = begin; i < end; ++i) {
                    f(i);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) {
                    error = std::current_exception();
                }
                next.store(n);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
        pool.emplace_back(body);
    }
    body();
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace albedo
