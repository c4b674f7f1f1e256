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

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dlscale/control/coordinator.hpp"
#include "dlscale/core/rng.hpp"

namespace dlscale::control {

struct SimulationConfig {
  int ranks = 1;
  int radix = 2;
  std::vector<std::string> tensors;
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;
  /// Upper bound on processed events before declaring a deadlock; 0 = automatic.
  std::uint64_t max_events = 0;
};

struct SimulationResult {
  bool completed = false;
  std::uint64_t events = 0;
  std::vector<std::vector<std::string>> executed;  // per rank, in execution order
  std::vector<std::string> root_ready;             // root's global-ready list
  int max_sent_per_tensor = 0;
  int max_received_per_tensor = 0;
};

/// Discrete-event run of one coordinator per rank. Every step picks uniformly
/// among the enabled events: a rank marking its next tensor ready (each rank
/// follows its own random permutation), delivery of the head frame of any
/// non-empty (src, dst) channel, a root poll, or a rank executing its next
/// scheduled tensor. Channels are FIFO; there is no cross-channel ordering.
inline SimulationResult simulate_control_plane(const SimulationConfig& cfg) {
  const ControlTree tree(cfg.ranks, cfg.radix);
  const auto n = static_cast<std::size_t>(cfg.ranks);
  Rng rng(cfg.seed);

  std::vector<Coordinator> coords;
  coords.reserve(n);
  std::vector<std::vector<std::string>> order(n, cfg.tensors);
  std::vector<std::size_t> next_mark(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    coords.emplace_back(static_cast<int>(r), tree);
    coords[r].register_tensors(cfg.epoch, cfg.tensors);
    shuffle(order[r], rng);
  }

  using Channel = std::pair<int, int>;
  std::map<Channel, std::deque<Frame>> channels;
  std::vector<Channel> active;
  std::map<Channel, std::size_t> active_pos;

  auto post = [&](int src, std::vector<Outgoing>&& outs) {
    for (auto& o : outs) {
      o.frame.src_rank = static_cast<std::uint32_t>(src);
      Channel ch{src, o.dst};
      auto& q = channels[ch];
      if (q.empty()) {
        active_pos[ch] = active.size();
        active.push_back(ch);
      }
      q.push_back(std::move(o.frame));
    }
  };

  auto deactivate = [&](const Channel& ch) {
    const std::size_t pos = active_pos[ch];
    active_pos[active.back()] = pos;
    active[pos] = active.back();
    active.pop_back();
    active_pos.erase(ch);
  };

  std::vector<int> runnable;
  std::vector<std::ptrdiff_t> runnable_pos(n, -1);
  auto refresh = [&](int r) {
    const auto ur = static_cast<std::size_t>(r);
    const bool want = coords[ur].has_executable();
    if (want && runnable_pos[ur] < 0) {
      runnable_pos[ur] = static_cast<std::ptrdiff_t>(runnable.size());
      runnable.push_back(r);
    } else if (!want && runnable_pos[ur] >= 0) {
      const auto pos = static_cast<std::size_t>(runnable_pos[ur]);
      runnable_pos[static_cast<std::size_t>(runnable.back())] = static_cast<std::ptrdiff_t>(pos);
      runnable[pos] = runnable.back();
      runnable.pop_back();
      runnable_pos[ur] = -1;
    }
  };

  std::vector<int> markers;
  for (std::size_t r = 0; r < n; ++r)
    if (!cfg.tensors.empty()) markers.push_back(static_cast<int>(r));

  SimulationResult res;
  res.executed.assign(n, {});
  const std::uint64_t limit =
      cfg.max_events ? cfg.max_events : 64 * (static_cast<std::uint64_t>(n) + 1) * (cfg.tensors.size() + 1) + 1024;
  const std::size_t total = n * cfg.tensors.size();
  std::size_t executed = 0;

  while (executed < total && res.events < limit) {
    const bool poll = coords[0].has_pending();
    const std::size_t choices = markers.size() + active.size() + runnable.size() + (poll ? 1 : 0);
    if (choices == 0) break;  // nothing enabled: deadlock
    ++res.events;
    std::size_t pick = rng.below(choices);

    if (pick < markers.size()) {
      const int r = markers[pick];
      auto& i = next_mark[static_cast<std::size_t>(r)];
      post(r, coords[static_cast<std::size_t>(r)].mark_ready(cfg.epoch, order[static_cast<std::size_t>(r)][i]));
      refresh(r);
      if (++i == cfg.tensors.size()) {
        markers[pick] = markers.back();
        markers.pop_back();
      }
      continue;
    }
    pick -= markers.size();
    if (pick < active.size()) {
      const Channel ch = active[pick];
      auto& q = channels[ch];
      Frame f = std::move(q.front());
      q.pop_front();
      if (q.empty()) deactivate(ch);
      post(ch.second, coords[static_cast<std::size_t>(ch.second)].on_frame(f));
      refresh(ch.second);
      continue;
    }
    pick -= active.size();
    if (pick < runnable.size()) {
      const auto r = static_cast<std::size_t>(runnable[pick]);
      res.executed[r].push_back(coords[r].pop_executable().name);
      refresh(static_cast<int>(r));
      ++executed;
      continue;
    }
    post(0, coords[0].emit_schedule());
    refresh(0);
  }

  res.completed = executed == total;
  for (const auto& k : coords[0].global_ready()) res.root_ready.push_back(k.name);
  for (const auto& c : coords) {
    res.max_sent_per_tensor = std::max(res.max_sent_per_tensor, c.stats().max_sent_per_tensor);
    res.max_received_per_tensor = std::max(res.max_received_per_tensor, c.stats().max_received_per_tensor);
  }
  return res;
}

}  // namespace dlscale::control
