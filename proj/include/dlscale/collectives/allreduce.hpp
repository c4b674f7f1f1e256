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

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlscale/collectives/communicator.hpp"
#include "dlscale/core/tensor.hpp"
#include "dlscale/core/topology.hpp"

namespace dlscale::collectives {

enum class ReduceOp { sum, mean };

/// [begin, end) index range.
struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const Range&, const Range&) = default;
};

/// Chunk c of a p-way near-equal split of n elements.
inline Range ring_chunk(std::size_t n, std::size_t p, std::size_t c) { return {c * n / p, (c + 1) * n / p}; }

/// Lane shards: lane i owns [i*ceil(n/L), min((i+1)*ceil(n/L), n)). Only
/// non-empty shards are returned, so short tensors use fewer lanes.
inline std::vector<Range> lane_shards(std::size_t n, int lanes) {
  std::vector<Range> out;
  if (n == 0) return out;
  const std::size_t l = static_cast<std::size_t>(std::max(1, lanes));
  const std::size_t step = (n + l - 1) / l;
  for (std::size_t i = 0; i < l && i * step < n; ++i) out.push_back({i * step, std::min((i + 1) * step, n)});
  return out;
}

namespace detail {

inline void scale(std::span<float> v, std::size_t participants) {
  const float inv = 1.0f / static_cast<float>(participants);
  for (auto& x : v) x *= inv;
}

inline std::size_t position_of(std::span<const int> peers, int rank) {
  auto it = std::find(peers.begin(), peers.end(), rank);
  if (it == peers.end()) throw ConfigError("rank " + std::to_string(rank) + " is not among the collective's peers");
  return static_cast<std::size_t>(it - peers.begin());
}

}  // namespace detail

/// Ring all-reduce in place: p-1 reduce-scatter steps followed by p-1
/// all-gather steps over p near-equal chunks. Each chunk's sum is produced
/// once and then copied around the ring, so all peers end byte-identical.
/// `tag` must be unique among collectives in flight for `epoch`.
inline void ring_allreduce(Communicator& comm, std::span<float> data, std::span<const int> peers,
                           std::uint32_t epoch, const std::string& tag, ReduceOp op = ReduceOp::sum) {
  if (peers.empty()) throw ConfigError("ring all-reduce needs at least one peer");
  const std::size_t p = peers.size();
  const std::size_t pos = detail::position_of(peers, comm.rank());
  const std::size_t n = data.size();
  if (p > 1) {
    const int right = peers[(pos + 1) % p];
    const int left = peers[(pos + p - 1) % p];
    auto send = [&](std::uint32_t step, std::size_t c) {
      const Range r = ring_chunk(n, p, c);
      comm.send_chunk(right, {epoch, tag, step, r.begin, static_cast<std::uint32_t>(r.size())},
                      data.subspan(r.begin, r.size()));
    };
    auto recv = [&](std::uint32_t step, std::size_t c) {
      const Range r = ring_chunk(n, p, c);
      return std::pair{r, comm.recv_chunk(left, epoch, tag, step, r.begin, static_cast<std::uint32_t>(r.size()))};
    };
    for (std::size_t s = 0; s + 1 < p; ++s) {
      send(static_cast<std::uint32_t>(s), (pos + p - s) % p);
      auto [r, vals] = recv(static_cast<std::uint32_t>(s), (pos + 2 * p - s - 1) % p);
      float* dst = data.data() + r.begin;
      for (std::size_t i = 0; i < vals.size(); ++i) dst[i] += vals[i];
    }
    for (std::size_t s = 0; s + 1 < p; ++s) {
      const auto step = static_cast<std::uint32_t>(p - 1 + s);
      send(step, (pos + 1 + p - s) % p);
      auto [r, vals] = recv(step, (pos + p - s) % p);
      std::copy(vals.begin(), vals.end(), data.begin() + static_cast<std::ptrdiff_t>(r.begin));
    }
  }
  if (op == ReduceOp::mean) detail::scale(data, p);
}

/// Copies `data` from `root` to every other rank in `node_peers`.
inline void local_broadcast(Communicator& comm, int root, std::span<float> data, std::span<const int> node_peers,
                            std::uint32_t epoch, const std::string& tag, std::uint64_t offset = 0) {
  detail::position_of(node_peers, root);
  const auto count = static_cast<std::uint32_t>(data.size());
  if (comm.rank() == root) {
    for (int peer : node_peers)
      if (peer != root) comm.send_chunk(peer, {epoch, tag, 0, offset, count}, data);
    return;
  }
  detail::position_of(node_peers, comm.rank());
  auto vals = comm.recv_chunk(root, epoch, tag, 0, offset, count);
  std::copy(vals.begin(), vals.end(), data.begin());
}

/// Two-level all-reduce: (1) ring all-reduce among the ranks of each node,
/// (2) lane slot i ring-all-reduces shard i with slot i of every other node,
/// (3) each lane rank broadcasts its finished shard to its node.
inline void hybrid_allreduce(Communicator& comm, std::span<float> data, const RankTopology& topo,
                             std::uint32_t epoch, const std::string& tag, ReduceOp op = ReduceOp::sum) {
  if (comm.world_size() != topo.world_size())
    throw ConfigError("topology world size " + std::to_string(topo.world_size()) + " != transport world size " +
                      std::to_string(comm.world_size()));
  const RankLocation me = topo.locate(comm.rank());
  const auto node_peers = topo.node_peers(me.node);

  ring_allreduce(comm, data, node_peers, epoch, tag + "/intra");

  const auto shards = lane_shards(data.size(), topo.lanes());
  if (topo.num_nodes() > 1 && static_cast<std::size_t>(me.slot) < shards.size()) {
    const Range r = shards[static_cast<std::size_t>(me.slot)];
    const auto lane_peers = topo.lane_peers(me.slot);
    ring_allreduce(comm, data.subspan(r.begin, r.size()), lane_peers, epoch, tag + "/lane");
  }

  if (topo.num_nodes() > 1) {
    for (std::size_t lane = 0; lane < shards.size(); ++lane) {
      const Range r = shards[lane];
      local_broadcast(comm, topo.rank_of(me.node, static_cast<int>(lane)), data.subspan(r.begin, r.size()),
                      node_peers, epoch, tag + "/bcast" + std::to_string(lane), r.begin);
    }
  }

  if (op == ReduceOp::mean) detail::scale(data, static_cast<std::size_t>(topo.world_size()));
}

inline NamedTensor ring_allreduce(Communicator& comm, NamedTensor t, std::span<const int> peers,
                                  std::uint32_t epoch, ReduceOp op = ReduceOp::sum) {
  ring_allreduce(comm, t.mutable_values(), peers, epoch, t.name(), op);
  return t;
}

inline NamedTensor hybrid_allreduce(Communicator& comm, NamedTensor t, const RankTopology& topo,
                                    std::uint32_t epoch, ReduceOp op = ReduceOp::sum) {
  hybrid_allreduce(comm, t.mutable_values(), topo, epoch, t.name(), op);
  return t;
}

}  // namespace dlscale::collectives
