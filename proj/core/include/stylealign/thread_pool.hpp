#pragma once

// Work pool used by the tensor ops. Partitioning of parallel_for is a pure
// function of the range, never of the worker count, so results written to
// disjoint slots are bitwise identical for any pool size. Calls from inside
// a pool task run serially (no nested parallelism).

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace stylealign {

class ThreadPool {
public:
    explicit ThreadPool(int workers) {
        if (workers < 1) workers = 1;
        for (int i = 0; i < workers; ++i) {
            threads_.emplace_back([this] { worker_loop(); });
        }
    }
    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }
    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    int size() const { return static_cast<int>(threads_.size()); }

    // Runs fn(i) for i in [0, n). Chunks of `grain` consecutive indices.
    void parallel_for(int64_t n, const std::function<void(int64_t)>& fn, int64_t grain = 1) {
        if (n <= 0) return;
        if (n == 1 || size() == 1 || inside_task()) {
            for (int64_t i = 0; i < n; ++i) fn(i);
            return;
        }
        if (grain < 1) grain = 1;
        const int64_t chunks = (n + grain - 1) / grain;
        std::atomic<int64_t> next{0};
        std::mutex done_mu;
        std::condition_variable done_cv;
        const int helpers = static_cast<int>(std::min<int64_t>(size(), chunks));
        int remaining = helpers + 1;  // guarded by done_mu

        // The final decrement happens under done_mu and notifies while still
        // holding it, so the caller cannot unwind these locals while a helper
        // is still signalling.
        auto run_chunks = [&] {
            int64_t c;
            while ((c = next.fetch_add(1)) < chunks) {
                const int64_t lo = c * grain;
                const int64_t hi = std::min<int64_t>(lo + grain, n);
                for (int64_t i = lo; i < hi; ++i) fn(i);
            }
            std::lock_guard<std::mutex> lk(done_mu);
            if (--remaining == 0) done_cv.notify_one();
        };

        {
            std::unique_lock<std::mutex> lk(mu_);
            for (int i = 0; i < helpers; ++i) queue_.emplace_back(run_chunks);
        }
        cv_.notify_all();
        run_chunks();
        std::unique_lock<std::mutex> lk(done_mu);
        done_cv.wait(lk, [&] { return remaining == 0; });
    }

    static ThreadPool& global() {
        static ThreadPool pool(default_workers());
        return pool;
    }

    static int default_workers() {
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 2 : static_cast<int>(hw);
    }

private:
    static bool& inside_task() {
        thread_local bool flag = false;
        return flag;
    }

    void worker_loop() {
        inside_task() = true;
        for (;;) {
            std::function<void()> task;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [this] { return stop_ || !queue_.empty(); });
                if (stop_ && queue_.empty()) return;
                task = std::move(queue_.back());
                queue_.pop_back();
            }
            task();
        }
    }

    std::vector<std::thread> threads_;
    std::vector<std::function<void()>> queue_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stop_ = false;
};

inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn, int64_t grain = 1) {
    ThreadPool::global().parallel_for(n, fn, grain);
}

} // namespace stylealign
