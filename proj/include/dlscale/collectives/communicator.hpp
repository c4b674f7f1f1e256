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
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "dlscale/core/error.hpp"
#include "dlscale/transport/endpoint.hpp"

namespace dlscale::collectives {

using transport::Frame;
using transport::MsgType;

/// ChunkData payload: epoch u32 | tensor name (u16 length + bytes) |
/// chunk index u32 | offset u64 | element count u32 | raw f32 LE values.
struct ChunkHeader {
  std::uint32_t epoch = 0;
  std::string tensor;
  std::uint32_t chunk = 0;
  std::uint64_t offset = 0;
  std::uint32_t count = 0;
};

inline Frame encode_chunk(const ChunkHeader& h, std::span<const float> values) {
  if (values.size() != h.count) throw ShapeError("chunk count does not match value span");
  Frame f{MsgType::chunk_data, 0, {}};
  f.payload.reserve(4 + 2 + h.tensor.size() + 4 + 8 + 4 + values.size_bytes());
  ByteWriter w(f.payload);
  w.u32(h.epoch);
  w.str16(h.tensor);
  w.u32(h.chunk);
  w.u64(h.offset);
  w.u32(h.count);
  w.floats(values);
  return f;
}

inline ChunkHeader decode_chunk(const Frame& f, std::vector<float>& values) {
  if (f.type != MsgType::chunk_data) throw ProtocolError("not a chunk frame");
  ByteReader r(f.payload);
  ChunkHeader h;
  h.epoch = r.u32();
  h.tensor = r.str16();
  h.chunk = r.u32();
  h.offset = r.u64();
  h.count = r.u32();
  if (r.remaining() != static_cast<std::size_t>(h.count) * sizeof(float))
    throw ProtocolError("chunk payload size does not match element count");
  values.resize(h.count);
  r.floats(values);
  return h;
}

/// Per-rank helper that matches incoming chunks to the collective waiting for
/// them. Chunks for other (src, epoch, tensor, chunk) keys are stashed; every
/// non-chunk frame seen while waiting is kept in a backlog for the control
/// loop. Single consumer, like the endpoint underneath.
class Communicator {
 public:
  explicit Communicator(transport::Endpoint& ep, std::chrono::milliseconds timeout = std::chrono::seconds(120))
      : ep_(&ep), timeout_(timeout) {}

  int rank() const { return ep_->rank(); }
  int world_size() const { return ep_->world_size(); }
  transport::Endpoint& endpoint() { return *ep_; }

  void send_chunk(int dst, const ChunkHeader& h, std::span<const float> values) {
    ep_->send(dst, encode_chunk(h, values));
  }

  /// Blocks until the matching chunk arrives, then checks it covers exactly
  /// [offset, offset + count).
  std::vector<float> recv_chunk(int src, std::uint32_t epoch, const std::string& tensor, std::uint32_t chunk,
                                std::uint64_t offset, std::uint32_t count) {
    Key key{src, epoch, tensor, chunk};
    auto take = [&](Stashed&& s) {
      if (s.offset != offset || s.values.size() != count)
        throw ShapeError("shape mismatch on '" + tensor + "': rank " + std::to_string(src) + " sent offset " +
                         std::to_string(s.offset) + " count " + std::to_string(s.values.size()) + ", expected offset " +
                         std::to_string(offset) + " count " + std::to_string(count));
      return std::move(s.values);
    };
    if (auto it = stash_.find(key); it != stash_.end()) {
      Stashed s = std::move(it->second.front());
      it->second.pop_front();
      if (it->second.empty()) stash_.erase(it);
      return take(std::move(s));
    }
    const auto deadline = transport::Clock::now() + timeout_;
    for (;;) {
      const auto now = transport::Clock::now();
      if (now >= deadline)
        throw TransportError("rank " + std::to_string(rank()) + " timed out waiting for chunk " +
                             std::to_string(chunk) + " of '" + tensor + "' from rank " + std::to_string(src));
      auto f = ep_->recv(std::chrono::duration_cast<std::chrono::microseconds>(deadline - now));
      if (!f) continue;
      if (f->type != MsgType::chunk_data) {
        backlog_.push_back(std::move(*f));
        continue;
      }
      Stashed s;
      const ChunkHeader h = decode_chunk(*f, s.values);
      s.offset = h.offset;
      Key got{static_cast<int>(f->src_rank), h.epoch, h.tensor, h.chunk};
      if (got == key) return take(std::move(s));
      stash_[std::move(got)].push_back(std::move(s));
    }
  }

  /// Next non-chunk frame: backlog first, then the endpoint. Chunk frames
  /// that arrive meanwhile are stashed.
  std::optional<Frame> next_message(std::chrono::microseconds timeout) {
    if (!backlog_.empty()) {
      Frame f = std::move(backlog_.front());
      backlog_.pop_front();
      return f;
    }
    const auto deadline = transport::Clock::now() + timeout;
    for (;;) {
      const auto now = transport::Clock::now();
      auto f = ep_->recv(now >= deadline ? std::chrono::microseconds(0)
                                         : std::chrono::duration_cast<std::chrono::microseconds>(deadline - now));
      if (!f) return std::nullopt;
      if (f->type != MsgType::chunk_data) return f;
      Stashed s;
      const ChunkHeader h = decode_chunk(*f, s.values);
      s.offset = h.offset;
      stash_[Key{static_cast<int>(f->src_rank), h.epoch, h.tensor, h.chunk}].push_back(std::move(s));
    }
  }

  std::size_t stashed_chunks() const {
    std::size_t n = 0;
    for (const auto& [k, q] : stash_) n += q.size();
    return n;
  }

 private:
  using Key = std::tuple<int, std::uint32_t, std::string, std::uint32_t>;
  struct Stashed {
    std::uint64_t offset = 0;
    std::vector<float> values;
  };

  transport::Endpoint* ep_;
  std::chrono::milliseconds timeout_;
  std::map<Key, std::deque<Stashed>> stash_;
  std::deque<Frame> backlog_;
};

}  // namespace dlscale::collectives
