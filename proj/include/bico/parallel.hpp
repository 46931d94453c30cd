#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace bico {

/// Worker count used when a call site passes jobs = 0.
inline std::atomic<unsigned> &default_jobs() {
    static std::atomic<unsigned> jobs{std::max(1u, std::thread::hardware_concurrency())};
    return jobs;
}

/// Runs fn(i) for i in [begin, end) over up to `jobs` threads. Each index is
/// handled by exactly one worker, so results written per index are independent
/// of the schedule. The first exception thrown by a worker is rethrown.
template<typename Fn>
void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end, unsigned jobs, Fn &&fn) {
    if (end <= begin) { return; }
    if (jobs == 0) { jobs = default_jobs().load(); }
    const auto count = static_cast<std::size_t>(end - begin);
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, count));
    if (jobs <= 1) {
        for (std::ptrdiff_t i = begin; i < end; ++i) { fn(i); }
        return;
    }
    std::atomic<std::ptrdiff_t> next{begin};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        try {
            for (std::ptrdiff_t i = next++; i < end; i = next++) { fn(i); }
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) { failure = std::current_exception(); }
            next = end;
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(jobs - 1);
    for (unsigned t = 1; t < jobs; ++t) { pool.emplace_back(worker); }
    worker();
    for (auto &t : pool) { t.join(); }
    if (failure) { std::rethrow_exception(failure); }
}

}  // namespace bico
