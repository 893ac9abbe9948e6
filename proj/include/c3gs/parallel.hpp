// Copyright Contributors to the c3gs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace c3gs {

namespace detail {
inline std::atomic<int>& thread_override() {
    static std::atomic<int> value{-1};
    return value;
}
}  // namespace detail

/// Worker count used by the kernels. C3GS_THREADS caps it; 0 or unset means hardware concurrency.
inline std::size_t worker_count() {
    int forced = detail::thread_override().load();
    if (forced > 0) return static_cast<std::size_t>(forced);
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("C3GS_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return hw;
}

/// Overrides the worker count for the current process (<= 0 restores the env/auto default).
inline void set_worker_count(int n) { detail::thread_override().store(n > 0 ? n : -1); }

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; each index is
/// handled by exactly one worker, so callers that write only element i stay deterministic.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 1) {
    std::size_t workers = std::min(worker_count(), n / std::max<std::size_t>(min_chunk, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (std::size_t w = 0; w < workers; ++w) {
        std::size_t begin = n * w / workers;
        std::size_t end = n * (w + 1) / workers;
        pool.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace c3gs
