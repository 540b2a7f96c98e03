// Fixed-size worker pool with a static-partition parallel_for.
//
// Every index is processed by exactly one worker, and callers only write
// outputs owned by that index, so results do not depend on the worker count.
#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace clap {

class ThreadPool {
 public:
  explicit ThreadPool(std::size_t workers) : workers_(std::max<std::size_t>(1, workers)) {
    for (std::size_t i = 1; i < workers_; ++i) {
      threads_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    wake_.notify_all();
    for (auto& t : threads_) t.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  std::size_t workers() const { return workers_; }

  // Runs fn(i) for i in [0, count). The calling thread takes chunk 0.
  void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    if (workers_ == 1 || count == 1) {
      for (std::size_t i = 0; i < count; ++i) fn(i);
      return;
    }
    std::unique_lock dispatch(dispatch_mutex_);
    {
      std::lock_guard lock(mutex_);
      task_ = &fn;
      count_ = count;
      pending_ = workers_ - 1;
      error_ = nullptr;
      ++generation_;
    }
    wake_.notify_all();
    std::exception_ptr local_error;
    try {
      run_chunk(0);
    } catch (...) {
      local_error = std::current_exception();
    }
    std::unique_lock lock(mutex_);
    done_.wait(lock, [this] { return pending_ == 0; });
    task_ = nullptr;
    if (local_error) std::rethrow_exception(local_error);
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void run_chunk(std::size_t worker) {
    const std::size_t chunk = (count_ + workers_ - 1) / workers_;
    const std::size_t begin = worker * chunk;
    const std::size_t end = std::min(count_, begin + chunk);
    for (std::size_t i = begin; i < end; ++i) (*task_)(i);
  }

  void worker_loop(std::size_t index) {
    std::size_t seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mutex_);
        wake_.wait(lock, [&] { return stopping_ || generation_ != seen; });
        if (stopping_) return;
        seen = generation_;
      }
      std::exception_ptr err;
      try {
        run_chunk(index);
      } catch (...) {
        err = std::current_exception();
      }
      {
        std::lock_guard lock(mutex_);
        if (err && !error_) error_ = err;
        if (--pending_ == 0) done_.notify_one();
      }
    }
  }

  std::size_t workers_;
  std::vector<std::thread> threads_;
  std::mutex dispatch_mutex_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(std::size_t)>* task_ = nullptr;
  std::size_t count_ = 0;
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  std::exception_ptr error_;
  bool stopping_ = false;
};

namespace detail {
inline std::unique_ptr<ThreadPool>& global_pool() {
  static std::unique_ptr<ThreadPool> pool = std::make_unique<ThreadPool>(1);
  return pool;
}
}  // namespace detail

// Sets the worker count used by all library kernels. Not thread-safe with
// respect to concurrently running kernels.
inline void set_num_workers(std::size_t workers) {
  auto& pool = detail::global_pool();
  if (pool->workers() != std::max<std::size_t>(1, workers)) {
    pool = std::make_unique<ThreadPool>(workers);
  }
}

inline std::size_t num_workers() { return detail::global_pool()->workers(); }

inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  detail::global_pool()->parallel_for(count, fn);
}

}  // namespace clap
