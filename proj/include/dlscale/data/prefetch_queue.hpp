/*
 * Copyright 2026 The dlscale Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cassert>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <mutex>
#include <optional>

#include "dlscale/core/error.hpp"

namespace dlscale::data {

/// Bounded blocking queue. push() waits while full; pop() waits while empty
/// and returns nullopt once the queue is closed and drained.
template <class T>
class PrefetchQueue {
 public:
  explicit PrefetchQueue(std::size_t capacity = 4) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("prefetch queue capacity must be >= 1");
  }

  PrefetchQueue(const PrefetchQueue&) = delete;
  PrefetchQueue& operator=(const PrefetchQueue&) = delete;

  /// Returns false if the queue was closed before the item could be queued.
  bool push(T item) {
    std::unique_lock lk(mu_);
    not_full_.wait(lk, [&] { return closed_ || q_.size() < capacity_; });
    if (closed_) return false;
    q_.push_back(std::move(item));
    assert(q_.size() <= capacity_);
    if (q_.size() > high_water_) high_water_ = q_.size();
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lk(mu_);
    not_empty_.wait(lk, [&] { return closed_ || !q_.empty(); });
    if (q_.empty()) return std::nullopt;
    T item = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return item;
  }

  /// Wakes all waiters; queued items can still be popped.
  void close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::size_t capacity() const { return capacity_; }

  std::size_t size() const {
    std::lock_guard lk(mu_);
    return q_.size();
  }

  /// Largest occupancy ever observed.
  std::size_t high_water() const {
    std::lock_guard lk(mu_);
    return high_water_;
  }

 private:
  const std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> q_;
  std::size_t high_water_ = 0;
  bool closed_ = false;
};

}  // namespace dlscale::data
