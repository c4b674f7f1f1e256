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

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "dlscale/transport/endpoint.hpp"

namespace dlscale::transport {

class InProcessFabric;

/// Endpoint backed by per-rank mailboxes inside one OS process.
class InProcessEndpoint final : public Endpoint {
 public:
  InProcessEndpoint(InProcessFabric& fabric, int rank) : fabric_(&fabric), rank_(rank) {}

  int rank() const override { return rank_; }
  int world_size() const override;
  void send(int dst, Frame frame) override;
  std::optional<Frame> recv(std::chrono::microseconds timeout) override;
  void shutdown() override;

 private:
  InProcessFabric* fabric_;
  int rank_;
};

/// Owns the mailboxes of `world_size` ranks. Each rank's endpoint can be
/// claimed once.
class InProcessFabric {
 public:
  explicit InProcessFabric(int world_size, LinkModel link = {}) : link_(std::move(link)) {
    if (world_size < 1) throw TransportError("world size must be >= 1");
    boxes_.reserve(static_cast<std::size_t>(world_size));
    for (int i = 0; i < world_size; ++i) boxes_.push_back(std::make_unique<Mailbox>());
    claimed_.assign(static_cast<std::size_t>(world_size), false);
  }

  InProcessFabric(const InProcessFabric&) = delete;
  InProcessFabric& operator=(const InProcessFabric&) = delete;

  int world_size() const { return static_cast<int>(boxes_.size()); }

  std::unique_ptr<InProcessEndpoint> endpoint(int rank) {
    std::lock_guard lk(mu_);
    check(rank);
    if (claimed_[static_cast<std::size_t>(rank)])
      throw TransportError("endpoint for rank " + std::to_string(rank) + " already claimed");
    claimed_[static_cast<std::size_t>(rank)] = true;
    return std::make_unique<InProcessEndpoint>(*this, rank);
  }

  void deliver(int src, int dst, Frame frame) {
    check(dst);
    const auto bytes = frame.payload.size() + kHeaderBytes + kLengthBytes;
    Clock::time_point ready{};
    if (!link_.is_zero()) {
      // Size-dependent delays must not let a small frame overtake a large
      // one on the same link.
      std::lock_guard lk(mu_);
      auto& last = last_release_[{src, dst}];
      ready = std::max(Clock::now() + link_.delay(src, dst, bytes), last);
      last = ready;
    }
    boxes_[static_cast<std::size_t>(dst)]->push(std::move(frame), ready);
  }

  Mailbox& mailbox(int rank) {
    check(rank);
    return *boxes_[static_cast<std::size_t>(rank)];
  }

 private:
  void check(int rank) const {
    if (rank < 0 || rank >= world_size()) throw TransportError("unknown destination rank " + std::to_string(rank));
  }

  LinkModel link_;
  std::vector<std::unique_ptr<Mailbox>> boxes_;
  std::vector<bool> claimed_;
  std::map<std::pair<int, int>, Clock::time_point> last_release_;
  std::mutex mu_;
};

inline int InProcessEndpoint::world_size() const { return fabric_->world_size(); }

inline void InProcessEndpoint::send(int dst, Frame frame) {
  frame.src_rank = static_cast<std::uint32_t>(rank_);
  fabric_->deliver(rank_, dst, std::move(frame));
}

inline std::optional<Frame> InProcessEndpoint::recv(std::chrono::microseconds timeout) {
  return fabric_->mailbox(rank_).pop(timeout);
}

inline void InProcessEndpoint::shutdown() { fabric_->mailbox(rank_).close(); }

}  // namespace dlscale::transport
