#pragma once

// Small concurrency helpers for the acquisition pipeline.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>

namespace dedupacq::pipeline {

// Bounded MPMC queue. close() lets consumers drain what is left; abort()
// drops everything and wakes all waiters.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

  bool push(T item) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    return take();
  }

  std::optional<T> try_pop() {
    std::lock_guard lock(mutex_);
    return take();
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  void abort() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    items_.clear();
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::optional<T> take() {
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<T> items_;
  std::size_t capacity_;
  bool closed_ = false;
};

// Memory budget for artifact buffers. The reader reserves before it
// allocates; downstream stages release when they drop a buffer. A
// reservation is granted whenever nothing is downstream, so buffers the
// reader is still filling can never starve it.
class ByteBudget {
 public:
  explicit ByteBudget(std::uint64_t limit) : limit_(limit) {}

  // Returns false when aborted.
  bool reserve(std::uint64_t n, std::uint64_t reader_held) {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return aborted_ || downstream_ == 0 || downstream_ + reader_held + n <= limit_; });
    return !aborted_;
  }
  void hand_off(std::uint64_t n) {
    std::lock_guard lock(mutex_);
    downstream_ += n;
  }
  void release(std::uint64_t n) {
    std::lock_guard lock(mutex_);
    downstream_ -= n;
    cv_.notify_all();
  }
  void abort() {
    std::lock_guard lock(mutex_);
    aborted_ = true;
    cv_.notify_all();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::uint64_t limit_;
  std::uint64_t downstream_ = 0;
  bool aborted_ = false;
};

}  // namespace dedupacq::pipeline
