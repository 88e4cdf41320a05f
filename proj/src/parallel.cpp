// SPDX-License-Identifier: Apache-2.0
#include "albedo/parallel.hpp"

namespace albedo {

namespace {
std::atomic<int> g_threads{0};
}

void set_thread_count(int threads) { g_threads.store(threads < 0 ? 0 : threads); }

int thread_count() {
    const int t = g_threads.load();
    if (t > 0) {
        return t;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace albedo
