#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace quclab {

/// Worker count: QUCLAB_THREADS when set and positive, otherwise the hardware count.
inline std::size_t default_thread_count() {
    if (const char* env = std::getenv("QUCLAB_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Results must be written by
/// index, which keeps the output independent of scheduling. The first exception is rethrown.
template <class F>
void parallel_for(std::size_t count, F&& fn, std::size_t threads = default_thread_count()) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// Maps fn over [0, count) into a vector in index order.
template <class R, class F>
std::vector<R> parallel_map(std::size_t count, F&& fn, std::size_t threads = default_thread_count()) {
    std::vector<R> out(count);
    parallel_for(count, [&](std::size_t i) { out[i] = fn(i); }, threads);
    return out;
}

}  // namespace quclab
