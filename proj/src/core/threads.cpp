#include "core/threads.hpp"

#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace oseg {

namespace {

int clamp_threads(int n) {
    if (n <= 0) {
        unsigned hw = std::thread::hardware_concurrency();
        n = hw == 0 ? 1 : static_cast<int>(hw);
    }
    return n > 64 ? 64 : n;
}

std::atomic<int> g_threads{clamp_threads(0)};

// Nested parallel_for calls run the inner loop inline.
thread_local bool g_in_parallel = false;

struct Pool {
    std::mutex mu;
    std::condition_variable cv_work;
    std::condition_variable cv_done;
    std::vector<std::thread> workers;
    const std::function<void(std::int64_t)>* body = nullptr;
    std::atomic<std::int64_t> next{0};
    std::int64_t end = 0;
    std::atomic<int> active{0};
    std::uint64_t generation = 0;
    bool shutdown = false;
    std::exception_ptr error;
    std::mutex error_mu;

    ~Pool() {
        {
            std::lock_guard<std::mutex> lock(mu);
            shutdown = true;
        }
        cv_work.notify_all();
        for (auto& t : workers) {
            t.join();
        }
    }

    void ensure_workers(int n) {
        while (static_cast<int>(workers.size()) < n - 1) {
            workers.emplace_back([this] { worker_loop(); });
        }
    }

    void drain() {
        const auto* fn = body;
        while (true) {
            std::int64_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= end) {
                break;
            }
            try {
                (*fn)(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) {
                    error = std::current_exception();
                }
            }
        }
    }

    void worker_loop() {
        g_in_parallel = true; // nested parallel_for calls run inline
        std::uint64_t seen = 0;
        while (true) {
            {
                std::unique_lock<std::mutex> lock(mu);
                cv_work.wait(lock, [&] { return shutdown || generation != seen; });
                if (shutdown) {
                    return;
                }
                seen = generation;
            }
            drain();
            if (active.fetch_sub(1) == 1) {
                cv_done.notify_all();
            }
        }
    }

    void run(std::int64_t begin_i, std::int64_t end_i,
             const std::function<void(std::int64_t)>& fn, int nthreads) {
        {
            std::unique_lock<std::mutex> lock(mu);
            ensure_workers(nthreads);
            body = &fn;
            next.store(begin_i);
            end = end_i;
            error = nullptr;
            // Every existing worker wakes on the generation bump, so the
            // join count must cover all of them even when the requested
            // thread count has since been lowered.
            active.store(static_cast<int>(workers.size()));
            ++generation;
        }
        cv_work.notify_all();
        drain();
        {
            std::unique_lock<std::mutex> lock(mu);
            cv_done.wait(lock, [&] { return active.load() == 0; });
            body = nullptr;
        }
        if (error) {
            std::rethrow_exception(error);
        }
    }
};

Pool& pool() {
    static Pool p;
    return p;
}

} // namespace

void set_threads(int n) { g_threads.store(clamp_threads(n)); }

int thread_count() { return g_threads.load(); }

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& body) {
    if (end <= begin) {
        return;
    }
    const std::int64_t n = end - begin;
    const int nthreads = thread_count();
    if (nthreads <= 1 || n == 1 || g_in_parallel) {
        for (std::int64_t i = begin; i < end; ++i) {
            body(i);
        }
        return;
    }
    g_in_parallel = true;
    try {
        pool().run(begin, end, body, nthreads);
    } catch (...) {
        g_in_parallel = false;
        throw;
    }
    g_in_parallel = false;
}

} // namespace oseg
