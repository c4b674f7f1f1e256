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

#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>

#include "dlscale/core/error.hpp"
#include "dlscale/transport/frame.hpp"

namespace dlscale::transport {

using Clock = std::chrono::steady_clock;

/// Multi-producer, single-consumer frame queue whose entries become visible at
/// a per-entry release time. Entries from one sender are released in arrival
/// order as long as each link has a fixed delay.
class Mailbox {
 public:
  void push(Frame f, Clock::time_point ready_at = Clock::time_point{}) {
    {
      std::lock_guard lk(mu_);
      if (closed_) throw TransportError("endpoint shut down");
      q_.push_back({ready_at, std::move(f)});
    }
    cv_.notify_one();
  }

  /// Next released frame, or nullopt once `timeout` elapses with none.
  std::optional<Frame> pop(std::chrono::microseconds timeout) {
    const auto deadline = Clock::now() + timeout;
    std::unique_lock lk(mu_);
    for (;;) {
      if (failure_) std::rethrow_exception(failure_);
      if (closed_) throw TransportError("endpoint shut down");
      const auto now = Clock::now();
      auto wake = deadline;
      for (auto it = q_.begin(); it != q_.end(); ++it) {
        if (it->ready_at <= now) {
          Frame f = std::move(it->frame);
          q_.erase(it);
          return f;
        }
        if (it->ready_at < wake) wake = it->ready_at;
      }
      if (now >= deadline) return std::nullopt;
      cv_.wait_until(lk, wake);
    }
  }

  /// Makes the next pop() rethrow `e` (used by background readers).
  void fail(std::exception_ptr e) {
    {
      std::lock_guard lk(mu_);
      if (!failure_) failure_ = e;
    }
    cv_.notify_all();
  }

  void close() {
    {
      std::lock_guard lk(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lk(mu_);
    return closed_;
  }

 private:
  struct Entry {
    Clock::time_point ready_at;
    Frame frame;
  };
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Entry> q_;
  bool closed_ = false;
  std::exception_ptr failure_;
};

}  // namespace dlscale::transport
