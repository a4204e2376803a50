#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace gca {

using i64 = std::int64_t;
using u64 = std::uint64_t;
using u32 = std::uint32_t;

inline i64 numel_of(const std::vector<int>& shape) {
    i64 n = 1;
    for (int e : shape) n *= e;
    return n;
}

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::invalid_argument(msg);
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

// --- deterministic seed derivation ------------------------------------------

inline u64 fnv1a(std::string_view s) {
    u64 h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline u64 mix_u64(u64 x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline u64 derive_seed(u64 seed, std::string_view tag) {
    return mix_u64(seed ^ mix_u64(fnv1a(tag)));
}

inline u64 derive_seed(u64 seed, std::string_view tag, u64 index) {
    return mix_u64(derive_seed(seed, tag) ^ mix_u64(index + 0x517cc1b727220a95ull));
}

// --- multiply-accumulate accounting ------------------------------------------

namespace detail {
inline thread_local i64 mac_counter = 0;
inline thread_local bool mac_enabled = false;
}  // namespace detail

inline void count_macs(i64 n) {
    if (detail::mac_enabled) detail::mac_counter += n;
}

// Scoped MAC counter; reads back the total accumulated while alive.
class MacCounter {
public:
    MacCounter() {
        prev_enabled_ = detail::mac_enabled;
        prev_value_ = detail::mac_counter;
        detail::mac_enabled = true;
        detail::mac_counter = 0;
    }
    ~MacCounter() {
        detail::mac_counter = prev_value_;
        detail::mac_enabled = prev_enabled_;
    }
    i64 total() const { return detail::mac_counter; }

private:
    bool prev_enabled_;
    i64 prev_value_;
};

// --- deterministic parallel-for ----------------------------------------------
//
// Work is split into contiguous index blocks; every output element is computed
// entirely by one task with a fixed inner reduction order, so results do not
// depend on the number of worker threads.

class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int worker_count() const { return static_cast<int>(workers_.size()) + 1; }

    void run_blocks(i64 n, i64 grain, const std::function<void(i64, i64)>& body) {
        if (n <= 0) return;
        int nw = worker_count();
        if (nw <= 1 || n <= grain) {
            body(0, n);
            return;
        }
        i64 nblocks = std::min<i64>(nw, (n + grain - 1) / grain);
        i64 per = (n + nblocks - 1) / nblocks;
        std::atomic<int> remaining(static_cast<int>(nblocks) - 1);
        {
            std::lock_guard<std::mutex> lk(mu_);
            for (i64 b = 1; b < nblocks; ++b) {
                i64 lo = b * per, hi = std::min(n, lo + per);
                tasks_.push_back([&, lo, hi] {
                    body(lo, hi);
                    remaining.fetch_sub(1, std::memory_order_acq_rel);
                });
            }
            cv_.notify_all();
        }
        body(0, std::min(n, per));
        while (remaining.load(std::memory_order_acquire) > 0) {
            std::function<void()> task;
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (!tasks_.empty()) {
                    task = std::move(tasks_.back());
                    tasks_.pop_back();
                }
            }
            if (task)
                task();
            else
                std::this_thread::yield();
        }
    }

private:
    ThreadPool() {
        int n = 0;
        if (const char* env = std::getenv("GCA_THREADS")) n = std::atoi(env);
        if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        for (int i = 1; i < n; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }
    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
            cv_.notify_all();
        }
        for (auto& w : workers_) w.join();
    }

    void worker_loop() {
        for (;;) {
            std::function<void()> task;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [this] { return stop_ || !tasks_.empty(); });
                if (stop_ && tasks_.empty()) return;
                task = std::move(tasks_.back());
                tasks_.pop_back();
            }
            task();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_;
    std::vector<std::function<void()>> tasks_;
    std::vector<std::thread> workers_;
    bool stop_ = false;
};

template <typename Fn>
void parallel_for(i64 n, i64 grain, Fn&& fn) {
    ThreadPool::instance().run_blocks(n, grain, [&](i64 lo, i64 hi) {
        for (i64 i = lo; i < hi; ++i) fn(i);
    });
}

template <typename Fn>
void parallel_blocks(i64 n, i64 grain, Fn&& fn) {
    ThreadPool::instance().run_blocks(n, grain, std::function<void(i64, i64)>(fn));
}

}  // namespace gca
