#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace gog {

/// Worker count: `requested` if positive, else hardware concurrency; in
/// both cases capped by the GOG_THREADS environment variable when set.
inline int worker_count(int requested = 0)
{
    int n = requested > 0 ? requested
                          : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("GOG_THREADS")) {
        try {
            const int cap = std::stoi(env);
            if (cap >= 1) n = std::min(n, cap);
        } catch (const std::exception&) {
            // ignore malformed values
        }
    }
    return std::max(1, n);
}

/// Runs fn(worker, i) for i in [0, n). Work is claimed dynamically, so
/// callers must write results by index to stay order-independent. The first
/// exception thrown by any task is rethrown on the calling thread.
template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn)
{
    workers = std::clamp(workers, 1, std::max(1, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(0, i);
        return;
    }

    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (int i = next++; i < n; i = next++) {
                    try {
                        fn(w, i);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) error = std::current_exception();
                        next = n;
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

}  // namespace gog
