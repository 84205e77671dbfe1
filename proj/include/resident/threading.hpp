#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace resident {

namespace detail {

inline int env_thread_cap() {
    if (const char* s = std::getenv("RESIDENT_THREADS")) {
        int v = std::atoi(s);
        if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline int& thread_count_ref() {
    static int n = env_thread_cap();
    return n;
}

// Persistent worker pool. Work is handed out as chunk indices pulled from an
// atomic counter; each chunk is processed by exactly one thread, so values
// never depend on how chunks land on threads.
class ThreadPool {
  public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    void run(std::size_t n_chunks, const std::function<void(std::size_t)>& chunk_fn) {
        ensure_workers(thread_count_ref() - 1);
        {
            std::lock_guard<std::mutex> lk(mu_);
            chunk_fn_ = &chunk_fn;
            n_chunks_ = n_chunks;
            next_chunk_.store(0, std::memory_order_relaxed);
            pending_ = static_cast<int>(workers_.size());
            ++generation_;
        }
        cv_.notify_all();
        work();  // caller participates
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [&] { return pending_ == 0; });
        chunk_fn_ = nullptr;
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

  private:
    ThreadPool() = default;

    void ensure_workers(int wanted) {
        if (wanted < 0) wanted = 0;
        std::lock_guard<std::mutex> lk(resize_mu_);
        while (static_cast<int>(workers_.size()) < wanted) {
            workers_.emplace_back([this, gen = generation_] { worker_loop(gen); });
        }
        // shrinking is not supported; extra workers just idle
    }

    void worker_loop(std::uint64_t seen) {
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                if (!chunk_fn_) {  // woken by resize, nothing to do
                    continue;
                }
            }
            work();
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    void work() {
        const auto* fn = chunk_fn_;
        if (!fn) return;
        for (;;) {
            std::size_t c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            if (c >= n_chunks_) break;
            (*fn)(c);
        }
    }

    std::mutex mu_, resize_mu_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> workers_;
    const std::function<void(std::size_t)>* chunk_fn_ = nullptr;
    std::size_t n_chunks_ = 0;
    std::atomic<std::size_t> next_chunk_{0};
    std::uint64_t generation_ = 0;
    int pending_ = 0;
    bool stop_ = false;
};

}  // namespace detail

// Current worker budget (RESIDENT_THREADS env var, else hardware threads).
inline int thread_count() { return detail::thread_count_ref(); }

inline void set_thread_count(int n) { detail::thread_count_ref() = n < 1 ? 1 : n; }

// Runs body(begin, end) over a partition of [0, n). Every index is handled
// by exactly one invocation, so per-index results are identical for any
// thread count; only use it when distinct indices write distinct outputs.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    const int threads = thread_count();
    if (threads == 1 || n == 1) {
        body(0, n);
        return;
    }
    const std::size_t n_chunks =
        std::min<std::size_t>(n, static_cast<std::size_t>(threads) * 4);
    const std::size_t chunk = (n + n_chunks - 1) / n_chunks;
    detail::ThreadPool::instance().run(n_chunks, [&](std::size_t c) {
        const std::size_t b = c * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b < e) body(b, e);
    });
}

}  // namespace resident
