#pragma once

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace gsprune {

// Worker count: explicit request > GSPRUNE_THREADS > 1.
inline int resolve_threads(int requested) {
    if (requested > 0) {
        return requested;
    }
    if (const char* env = std::getenv("GSPRUNE_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) {
            return n;
        }
    }
    return 1;
}

// Runs fn(worker, begin, end) over contiguous chunks of [0, count). The
// partition depends only on (count, threads), so results that merge buffers
// in worker order are reproducible for a fixed thread count.
template <typename Fn>
inline void parallel_chunks(std::size_t count, int threads, Fn&& fn) {
    const int workers = static_cast<int>(std::min<std::size_t>(std::max(threads, 1), std::max<std::size_t>(count, 1)));
    if (workers <= 1) {
        fn(0, std::size_t{0}, count);
        return;
    }
    const std::size_t chunk = (count + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        const std::size_t begin = std::min(count, static_cast<std::size_t>(w) * chunk);
        const std::size_t end = std::min(count, begin + chunk);
        pool.emplace_back([&fn, w, begin, end] { fn(w, begin, end); });
    }
    for (auto& t : pool) {
        t.join();
    }
}

}  // namespace gsprune
