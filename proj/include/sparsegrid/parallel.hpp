// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace sparsegrid {

// Runs body(lo, hi) over a disjoint partition of [0, n). Every index is
// handled by exactly one invocation, so a body that is deterministic per
// index yields results independent of the thread count.
template <typename Body>
void parallel_for(int64_t n, int threads, Body&& body) {
    if (n <= 0) return;
    if (threads <= 1 || n < 2) {
        body(int64_t{0}, n);
        return;
    }
    const int use = static_cast<int>(std::min<int64_t>(threads, n));
    const int64_t chunk = (n + use - 1) / use;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(use) - 1);
    for (int t = 1; t < use; ++t) {
        const int64_t lo = t * chunk;
        const int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    body(int64_t{0}, std::min(chunk, n));
    for (auto& th : pool) th.join();
}

} // namespace sparsegrid
