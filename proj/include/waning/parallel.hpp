#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace waning {

struct Parallelism {
    unsigned threads = 0; // 0: hardware concurrency

    unsigned resolved() const {
        if (threads != 0) return threads;
        return std::max(1u, std::thread::hardware_concurrency());
    }
};

// Runs fn(i) for i in [0, count) over contiguous blocks. fn must only write to
// slot i of its output; the first exception thrown by any worker is rethrown.
template <class Fn>
void parallel_for(std::size_t count, Parallelism par, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(par.resolved(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t block = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * block;
        const std::size_t end = std::min(count, begin + block);
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

} // namespace waning
