#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace ngc {

// NGC_THREADS caps the pool; defaults to the hardware count.
inline size_t worker_count() {
    if (const char* env = std::getenv("NGC_THREADS")) {
        long v = std::atol(env);
        if (v >= 1) return size_t(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

// Runs fn(i) for i in [0, n). Each index must write only its own output
// slot; results are then independent of scheduling, so runs are
// bit-identical at any thread count.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
    size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace ngc
