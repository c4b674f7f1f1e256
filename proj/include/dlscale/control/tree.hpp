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

namespace dlscale::control {

/// Breadth-first tree of configurable radix over rank ids, rooted at rank 0:
/// parent(i) = (i - 1) / radix, children(i) = radix*i + 1 .. radix*i + radix.
class ControlTree {
 public:
  ControlTree(int rank_count, int radix) : n_(rank_count), r_(radix) {
    if (rank_count < 1) throw ConfigError("rank count must be >= 1");
    if (radix < 2) throw ConfigError("control tree radix must be >= 2, got " + std::to_string(radix));
  }

  int rank_count() const { return n_; }
  int radix() const { return r_; }
  static constexpr int root() { return 0; }

  std::optional<int> parent(int rank) const {
    check(rank);
    if (rank == 0) return std::nullopt;
    return (rank - 1) / r_;
  }

  std::vector<int> children(int rank) const {
    check(rank);
    std::vector<int> out;
    const long long first = static_cast<long long>(r_) * rank + 1;
    for (long long c = first; c < first + r_ && c < n_; ++c) out.push_back(static_cast<int>(c));
    return out;
  }

  /// Edges on the path from the root.
  int level(int rank) const {
    check(rank);
    int d = 0;
    while (rank > 0) {
      rank = (rank - 1) / r_;
      ++d;
    }
    return d;
  }

  /// Height of the tree in edges (deepest rank is the last one).
  int depth() const { return level(n_ - 1); }

 private:
  void check(int rank) const {
    if (rank < 0 || rank >= n_) throw ConfigError("rank " + std::to_string(rank) + " not in control tree");
  }

  int n_;
  int r_;
};

inline ControlTree build_tree(int rank_count, int radix) { return ControlTree(rank_count, radix); }

}  // namespace dlscale::control
