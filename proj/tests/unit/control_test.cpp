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

#include <gtest/gtest.h>

#include <algorithm>
#include <deque>
#include <set>
#include <string>
#include <vector>

#include "dlscale/control/coordinator.hpp"
#include "dlscale/control/messages.hpp"
#include "dlscale/control/simulation.hpp"
#include "dlscale/control/tree.hpp"

namespace dlscale::control {
namespace {

TEST(Tree, BreadthFirstNumbering) {
  const ControlTree t(7, 2);
  EXPECT_EQ(t.children(0), (std::vector<int>{1, 2}));
  EXPECT_EQ(t.children(1), (std::vector<int>{3, 4}));
  EXPECT_EQ(t.children(2), (std::vector<int>{5, 6}));
  EXPECT_TRUE(t.children(3).empty());
  EXPECT_EQ(t.parent(6), 2);
  EXPECT_FALSE(t.parent(0).has_value());
  EXPECT_EQ(t.depth(), 2);

  const ControlTree single(1, 4);
  EXPECT_TRUE(single.children(0).empty());
  EXPECT_EQ(single.depth(), 0);
  EXPECT_THROW(ControlTree(4, 1), ConfigError);
  EXPECT_THROW(t.parent(7), ConfigError);
}

TEST(Tree, LargeTreeCoversEveryRankOnce) {
  const int n = 27360;
  const ControlTree t(n, 8);
  EXPECT_EQ(t.depth(), 5);
  std::vector<int> seen(n, 0);
  std::deque<int> q{0};
  seen[0] = 1;
  int max_level = 0;
  while (!q.empty()) {
    const int r = q.front();
    q.pop_front();
    const auto kids = t.children(r);
    ASSERT_LE(kids.size(), 8u);
    max_level = std::max(max_level, t.level(r));
    for (int c : kids) {
      ASSERT_EQ(t.parent(c), r);
      ASSERT_EQ(t.level(c), t.level(r) + 1);
      ++seen[static_cast<std::size_t>(c)];
      q.push_back(c);
    }
  }
  EXPECT_EQ(max_level, 5);
  for (int r = 0; r < n; ++r) ASSERT_EQ(seen[static_cast<std::size_t>(r)], 1) << "rank " << r;
}

TEST(Messages, RoundTrip) {
  const Readiness r{3, "grad/conv1.weight"};
  EXPECT_EQ(decode_readiness(encode(r)), r);
  const Schedule s{7, {"a", "bb", ""}};
  EXPECT_EQ(decode_schedule(encode(s)), s);
  auto f = encode(r);
  f.payload.push_back(0);
  EXPECT_THROW(decode_readiness(f), ProtocolError);
  EXPECT_THROW(decode_schedule(encode(r)), ProtocolError);
}

TEST(Coordinator, SingleRankSchedulesImmediately) {
  Coordinator c(0, ControlTree(1, 2));
  EXPECT_TRUE(c.mark_ready(0, "g0").empty());
  ASSERT_EQ(c.global_ready().size(), 1u);
  EXPECT_EQ(c.global_ready()[0].name, "g0");
  EXPECT_TRUE(c.emit_schedule().empty());
  ASSERT_TRUE(c.has_executable());
  EXPECT_EQ(c.pop_executable().name, "g0");
}

TEST(Coordinator, WaitsForEveryChild) {
  const ControlTree tree(3, 2);
  Coordinator root(0, tree), a(1, tree), b(2, tree);
  EXPECT_TRUE(root.mark_ready(0, "g").empty());
  EXPECT_TRUE(root.global_ready().empty());
  EXPECT_TRUE(root.emit_schedule().empty());

  auto out = a.mark_ready(0, "g");
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].dst, 0);
  out[0].frame.src_rank = 1;
  root.on_frame(out[0].frame);
  EXPECT_TRUE(root.global_ready().empty());

  auto out_b = b.mark_ready(0, "g");
  out_b[0].frame.src_rank = 2;
  root.on_frame(out_b[0].frame);
  ASSERT_EQ(root.global_ready().size(), 1u);

  auto sched = root.emit_schedule();
  ASSERT_EQ(sched.size(), 2u);
  for (auto& s : sched) {
    s.frame.src_rank = 0;
    (s.dst == 1 ? a : b).on_frame(s.frame);
  }
  EXPECT_EQ(root.pop_executable().name, "g");
  EXPECT_EQ(a.pop_executable().name, "g");
  EXPECT_EQ(b.pop_executable().name, "g");
}

TEST(Coordinator, RejectsProtocolViolations) {
  const ControlTree tree(3, 2);
  Coordinator root(0, tree), a(1, tree);
  a.mark_ready(0, "g");
  EXPECT_THROW(a.mark_ready(0, "g"), ProtocolError);

  auto f = encode(Readiness{0, "g"});
  f.src_rank = 1;
  root.on_frame(f);
  EXPECT_THROW(root.on_frame(f), ProtocolError);

  auto stranger = encode(Readiness{0, "h"});
  stranger.src_rank = 5;
  EXPECT_THROW(root.on_frame(stranger), ProtocolError);

  auto sched = encode(Schedule{0, {"never"}});
  sched.src_rank = 0;
  EXPECT_THROW(a.on_frame(sched), ProtocolError);
  EXPECT_THROW(a.emit_schedule(), ProtocolError);
}

TEST(Simulation, SmallTreeRootListsEachTensorOnce) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SimulationConfig cfg;
    cfg.ranks = 7;
    cfg.radix = 2;
    cfg.tensors = {"t0", "t1", "t2"};
    cfg.seed = seed;
    const auto r = simulate_control_plane(cfg);
    ASSERT_TRUE(r.completed) << "seed " << seed;
    auto sorted = r.root_ready;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, cfg.tensors) << "seed " << seed;
    for (const auto& ex : r.executed) EXPECT_EQ(ex, r.executed[0]);
  }
}

TEST(Simulation, OneTensorRunsEverywhere) {
  for (int ranks : {1, 2, 9, 33}) {
    SimulationConfig cfg;
    cfg.ranks = ranks;
    cfg.radix = 3;
    cfg.tensors = {"only"};
    cfg.seed = static_cast<std::uint64_t>(ranks);
    const auto r = simulate_control_plane(cfg);
    ASSERT_TRUE(r.completed);
    for (const auto& ex : r.executed) EXPECT_EQ(ex, std::vector<std::string>{"only"});
  }
}

TEST(Simulation, MessageCountsStayWithinRadixBound) {
  for (int radix : {2, 4, 8}) {
    SimulationConfig cfg;
    cfg.ranks = 64;
    cfg.radix = radix;
    for (int i = 0; i < 20; ++i) cfg.tensors.push_back("g" + std::to_string(i));
    cfg.seed = static_cast<std::uint64_t>(radix);
    const auto r = simulate_control_plane(cfg);
    ASSERT_TRUE(r.completed);
    EXPECT_LE(r.max_sent_per_tensor, radix + 1);
    EXPECT_LE(r.max_received_per_tensor, radix + 1);
    EXPECT_GE(r.max_sent_per_tensor, 1);
    for (const auto& ex : r.executed) ASSERT_EQ(ex, r.executed[0]);
  }
}

TEST(Simulation, EightRanksRadixTwoSingleTensorCounts) {
  SimulationConfig cfg;
  cfg.ranks = 8;
  cfg.radix = 2;
  cfg.tensors = {"g"};
  const auto r = simulate_control_plane(cfg);
  ASSERT_TRUE(r.completed);
  EXPECT_LE(r.max_sent_per_tensor, 3);
  EXPECT_LE(r.max_received_per_tensor, 3);
}

}  // namespace
}  // namespace dlscale::control
