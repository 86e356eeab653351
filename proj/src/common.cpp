// SPDX-License-Identifier: Apache-2.0

#include "dtc/common.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>

namespace dtc {

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::uint64_t seed_for(std::uint64_t seed, const std::string& tag) {
    std::uint64_t h = fnv1a64(tag);
    h = fnv1a64(&seed, sizeof(seed), h);
    return h;
}

// ---------------------------------------------------------------------------
// worker pool: lazily started, resized on demand. Tasks are (first, last)
// index blocks; a static block partition keeps scheduling reproducible.

namespace {

thread_local bool tl_inside_pool = false;

class Pool {
  public:
    static Pool& instance() {
        static Pool p;
        return p;
    }

    void resize(unsigned n) {
        std::unique_lock lk(m_);
        if (n == target_) return;
        stop_workers(lk);
        target_ = n;
    }

    unsigned size() {
        std::unique_lock lk(m_);
        return target_;
    }

    void run(std::size_t n, const std::function<void(std::size_t)>& fn) {
        unsigned workers;
        {
            std::unique_lock lk(m_);
            workers = target_;
            if (workers > 1 && threads_.empty()) start_workers(workers - 1);
        }
        // nested calls (an op inside an already-parallel region) run inline
        if (workers <= 1 || n < 2 || tl_inside_pool) {
            for (std::size_t i = 0; i < n; ++i) fn(i);
            return;
        }
        const unsigned parts = std::min<std::size_t>(workers, n);
        {
            std::unique_lock lk(m_);
            job_fn_ = &fn;
            job_n_ = n;
            job_parts_ = parts;
            job_next_ = 0;
            job_done_ = 0;
            ++job_epoch_;
        }
        cv_.notify_all();
        // the calling thread takes part 0 (and any parts left unclaimed)
        work();
        std::unique_lock lk(m_);
        done_cv_.wait(lk, [&] { return job_done_ == job_parts_; });
        job_fn_ = nullptr;
    }

  private:
    Pool() : target_(std::max(1u, std::thread::hardware_concurrency())) {}

    ~Pool() {
        std::unique_lock lk(m_);
        stop_workers(lk);
    }

    void start_workers(unsigned n) {
        quit_ = false;
        for (unsigned i = 0; i < n; ++i)
            threads_.emplace_back([this] { worker_loop(); });
    }

    void stop_workers(std::unique_lock<std::mutex>& lk) {
        if (threads_.empty()) return;
        quit_ = true;
        cv_.notify_all();
        auto ts = std::move(threads_);
        threads_.clear();
        lk.unlock();
        for (auto& t : ts) t.join();
        lk.lock();
        quit_ = false;
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock lk(m_);
                cv_.wait(lk, [&] { return quit_ || (job_fn_ && job_epoch_ != seen); });
                if (quit_) return;
                seen = job_epoch_;
            }
            work();
        }
    }

    // claim static blocks until none remain
    void work() {
        for (;;) {
            unsigned part;
            {
                std::unique_lock lk(m_);
                if (!job_fn_ || job_next_ >= job_parts_) return;
                part = job_next_++;
            }
            const std::size_t lo = job_n_ * part / job_parts_;
            const std::size_t hi = job_n_ * (part + 1) / job_parts_;
            tl_inside_pool = true;
            for (std::size_t i = lo; i < hi; ++i) (*job_fn_)(i);
            tl_inside_pool = false;
            {
                std::unique_lock lk(m_);
                ++job_done_;
                if (job_done_ == job_parts_) done_cv_.notify_all();
            }
        }
    }

    std::mutex m_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> threads_;
    unsigned target_ = 1;
    bool quit_ = false;

    const std::function<void(std::size_t)>* job_fn_ = nullptr;
    std::size_t job_n_ = 0;
    unsigned job_parts_ = 0, job_next_ = 0, job_done_ = 0;
    std::uint64_t job_epoch_ = 0;
};

} // namespace

void set_worker_count(unsigned n) { Pool::instance().resize(std::max(1u, n)); }

unsigned worker_count() { return Pool::instance().size(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    Pool::instance().run(n, fn);
}

} // namespace dtc
