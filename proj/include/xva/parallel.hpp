#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace xva {

// Process-wide worker bound, settable once from the CLI --threads flag.
inline unsigned& worker_count() {
    static unsigned n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

// Static range split; each index is handled exactly once and workers write to
// disjoint output slots, so results do not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const unsigned threads = std::min<std::size_t>(worker_count(), n ? n : 1);
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::vector<std::thread> pool;
    const std::size_t chunk = std::max<std::size_t>(1, n / (8 * threads));
    auto work = [&] {
        for (;;) {
            const std::size_t begin = next.fetch_add(chunk);
            if (begin >= n) return;
            const std::size_t end = std::min(n, begin + chunk);
            try {
                for (std::size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

} // namespace xva
