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

#include <optional>
#include <string>
#include <vector>

#include "dlscale/core/error.hpp"

namespace dlscale {

/// Where a global rank sits: node, local slot, and inter-node lane (if any).
struct RankLocation {
  int node = 0;
  int slot = 0;
  std::optional<int> lane;

  friend bool operator==(const RankLocation&, const RankLocation&) = default;
};

/// Ranks are laid out node-major: rank = node * local_ranks + slot. The
/// lowest `lanes` slots of every node carry inter-node traffic.
class RankTopology {
 public:
  RankTopology() = default;

  RankTopology(int num_nodes, int local_ranks = 6, int lanes = 4, int radix = 4)
      : nodes_(num_nodes), local_(local_ranks), lanes_(lanes), radix_(radix) {
    if (nodes_ < 1) throw ConfigError("num_nodes must be >= 1");
    if (local_ < 1) throw ConfigError("local_ranks_per_node must be >= 1");
    if (lanes_ < 1 || lanes_ > local_)
      throw ConfigError("inter_node_lanes must be in [1, local_ranks_per_node]");
    if (radix_ < 2) throw ConfigError("control_radix must be >= 2");
  }

  int num_nodes() const { return nodes_; }
  int local_ranks() const { return local_; }
  int lanes() const { return lanes_; }
  int radix() const { return radix_; }
  int world_size() const { return nodes_ * local_; }

  RankLocation locate(int rank) const {
    if (rank < 0 || rank >= world_size())
      throw ConfigError("rank " + std::to_string(rank) + " out of range [0," +
                        std::to_string(world_size()) + ")");
    RankLocation loc{rank / local_, rank % local_, std::nullopt};
    if (loc.slot < lanes_) loc.lane = loc.slot;
    return loc;
  }

  int rank_of(int node, int slot) const { return node * local_ + slot; }

  /// All ranks on `node`, in slot order.
  std::vector<int> node_peers(int node) const {
    std::vector<int> out(static_cast<std::size_t>(local_));
    for (int s = 0; s < local_; ++s) out[static_cast<std::size_t>(s)] = rank_of(node, s);
    return out;
  }

  /// The rank holding `slot` on every node, in node order.
  std::vector<int> lane_peers(int slot) const {
    std::vector<int> out(static_cast<std::size_t>(nodes_));
    for (int n = 0; n < nodes_; ++n) out[static_cast<std::size_t>(n)] = rank_of(n, slot);
    return out;
  }

  friend bool operator==(const RankTopology&, const RankTopology&) = default;

 private:
  int nodes_ = 1;
  int local_ = 1;
  int lanes_ = 1;
  int radix_ = 4;
};

}  // namespace dlscale
