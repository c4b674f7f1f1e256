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
#include <cstdint>
#include <map>
#include <optional>
#include <utility>

#include "dlscale/transport/frame.hpp"
#include "dlscale/transport/mailbox.hpp"

namespace dlscale::transport {

/// Simulated link cost applied at the receiver: a frame from src to dst
/// becomes visible `latency + bytes / bandwidth` after it arrives. Loopback
/// frames are never delayed.
struct LinkModel {
  std::chrono::microseconds latency{0};
  double bytes_per_second = 0.0;  // 0 = unlimited
  std::map<std::pair<int, int>, std::chrono::microseconds> per_link_latency;

  Clock::duration delay(int src, int dst, std::size_t bytes) const {
    if (src == dst) return Clock::duration::zero();
    Clock::duration d = latency;
    if (auto it = per_link_latency.find({src, dst}); it != per_link_latency.end()) d = it->second;
    if (bytes_per_second > 0.0)
      d += std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(bytes / bytes_per_second));
    return d;
  }

  bool is_zero() const { return latency.count() == 0 && bytes_per_second == 0.0 && per_link_latency.empty(); }
};

/// One rank's view of the transport. send() may be called from any thread;
/// recv() has a single consumer.
class Endpoint {
 public:
  virtual ~Endpoint() = default;

  virtual int rank() const = 0;
  virtual int world_size() const = 0;

  /// Queues `frame` for delivery to `dst`; src_rank is stamped with rank().
  /// Delivery is exactly-once and FIFO per (src, dst) pair.
  virtual void send(int dst, Frame frame) = 0;

  /// Next frame in arrival order, or nullopt on timeout. Throws
  /// TransportError once the endpoint is shut down.
  virtual std::optional<Frame> recv(std::chrono::microseconds timeout) = 0;

  virtual void shutdown() = 0;
};

}  // namespace dlscale::transport
