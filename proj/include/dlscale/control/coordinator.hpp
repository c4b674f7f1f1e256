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
#include <compare>
#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "dlscale/control/messages.hpp"
#include "dlscale/control/tree.hpp"

namespace dlscale::control {

struct TensorKey {
  std::uint32_t epoch = 0;
  std::string name;

  friend auto operator<=>(const TensorKey&, const TensorKey&) = default;
};

struct Outgoing {
  int dst = 0;
  Frame frame;
};

/// Per-tensor message accounting, folded in as tensors are executed.
struct MessageStats {
  int max_sent_per_tensor = 0;
  int max_received_per_tensor = 0;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_received = 0;
};

/// Per-rank state machine for hierarchical readiness aggregation.
///
/// A rank forwards readiness for a tensor to its parent once it and every
/// child subtree are ready. The root appends fully ready tensors to an
/// arrival-ordered list and, when polled, emits them as one schedule per
/// epoch. Schedules are relayed to children before the rank executes them,
/// so every rank executes the same order. The object is a pure value: it
/// never touches a transport, callers send the returned Outgoing frames.
class Coordinator {
 public:
  Coordinator(int rank, ControlTree tree) : rank_(rank), tree_(tree) {
    parent_ = tree_.parent(rank);
    children_ = tree_.children(rank);
  }

  int rank() const { return rank_; }
  bool is_root() const { return !parent_.has_value(); }
  const std::vector<int>& children() const { return children_; }

  /// Declares tensors this rank will reduce in `epoch`. Optional: mark_ready
  /// registers implicitly.
  void register_tensors(std::uint32_t epoch, std::span<const std::string> names) {
    check_epoch(epoch);
    for (const auto& n : names) {
      auto& e = entry({epoch, n});
      if (e.registered) throw ProtocolError("tensor '" + n + "' registered twice in epoch " + std::to_string(epoch));
      e.registered = true;
    }
  }

  /// Records that this rank's local copy of the tensor is ready.
  std::vector<Outgoing> mark_ready(std::uint32_t epoch, const std::string& name) {
    check_epoch(epoch);
    TensorKey key{epoch, name};
    auto& e = entry(key);
    if (e.self_ready)
      throw ProtocolError("tensor '" + name + "' marked ready twice in epoch " + std::to_string(epoch));
    e.registered = true;
    e.self_ready = true;
    std::vector<Outgoing> out;
    maybe_forward(key, e, out);
    return out;
  }

  /// Consumes a readiness frame from a child or a schedule frame from the parent.
  std::vector<Outgoing> on_frame(const Frame& f) {
    std::vector<Outgoing> out;
    ++stats_.frames_received;
    const int src = static_cast<int>(f.src_rank);
    if (f.type == MsgType::readiness) {
      auto msg = decode_readiness(f);
      check_epoch(msg.epoch);
      const auto child = std::find(children_.begin(), children_.end(), src);
      if (child == children_.end())
        throw ProtocolError("rank " + std::to_string(rank_) + " got readiness from non-child " + std::to_string(src));
      TensorKey key{msg.epoch, std::move(msg.name)};
      auto& e = entry(key);
      const auto idx = static_cast<std::size_t>(child - children_.begin());
      if (e.child_seen.empty()) e.child_seen.assign(children_.size(), 0);
      if (e.child_seen[idx]) throw ProtocolError("duplicate readiness for '" + key.name + "' from " + std::to_string(src));
      e.child_seen[idx] = 1;
      ++e.children_ready;
      ++e.received;
      maybe_forward(key, e, out);
    } else if (f.type == MsgType::schedule) {
      auto msg = decode_schedule(f);
      check_epoch(msg.epoch);
      if (!parent_ || src != *parent_)
        throw ProtocolError("rank " + std::to_string(rank_) + " got schedule from non-parent " + std::to_string(src));
      for (const auto& n : msg.names) {
        auto it = entries_.find({msg.epoch, n});
        if (it == entries_.end() || !it->second.registered)
          throw ProtocolError("schedule names tensor '" + n + "' never registered on rank " + std::to_string(rank_));
        if (it->second.scheduled) throw ProtocolError("tensor '" + n + "' scheduled twice");
      }
      relay(msg, out);
    } else {
      throw ProtocolError("coordinator cannot handle message type " + std::to_string(static_cast<int>(f.type)));
    }
    return out;
  }

  /// Root only: batches every globally ready tensor not yet scheduled into
  /// one schedule per epoch, ordered by quorum arrival (name breaks ties).
  std::vector<Outgoing> emit_schedule() {
    if (!is_root()) throw ProtocolError("emit_schedule called on non-root rank " + std::to_string(rank_));
    std::vector<Outgoing> out;
    if (pending_.empty()) return out;
    std::sort(pending_.begin(), pending_.end(), [](const auto& a, const auto& b) {
      return std::tie(a.second.epoch, a.first, a.second.name) < std::tie(b.second.epoch, b.first, b.second.name);
    });
    std::size_t i = 0;
    while (i < pending_.size()) {
      Schedule s{pending_[i].second.epoch, {}};
      while (i < pending_.size() && pending_[i].second.epoch == s.epoch && s.names.size() < 0xFFFF)
        s.names.push_back(pending_[i++].second.name);
      relay(s, out);
    }
    pending_.clear();
    return out;
  }

  bool has_pending() const { return !pending_.empty(); }
  bool has_executable() const { return !executable_.empty(); }

  /// Next tensor to reduce, in the globally agreed order. Finalizes the
  /// tensor's message accounting.
  TensorKey pop_executable() {
    if (executable_.empty()) throw ProtocolError("no executable tensor");
    TensorKey key = std::move(executable_.front());
    executable_.pop_front();
    auto it = entries_.find(key);
    stats_.max_sent_per_tensor = std::max(stats_.max_sent_per_tensor, it->second.sent);
    stats_.max_received_per_tensor = std::max(stats_.max_received_per_tensor, it->second.received);
    entries_.erase(it);
    auto open = open_.find(key.epoch);
    if (--open->second == 0) {
      open_.erase(open);
      if (!has_entries(key.epoch)) close_epoch(key.epoch);
    }
    return key;
  }

  /// Root's arrival-ordered history of globally ready tensors.
  const std::vector<TensorKey>& global_ready() const { return global_ready_; }

  const MessageStats& stats() const { return stats_; }
  std::size_t live_tensors() const { return entries_.size(); }

 private:
  struct Entry {
    bool registered = false;
    bool self_ready = false;
    bool forwarded = false;
    bool scheduled = false;
    int children_ready = 0;
    std::vector<char> child_seen;
    int sent = 0;
    int received = 0;
  };

  Entry& entry(const TensorKey& key) { return entries_[key]; }

  void check_epoch(std::uint32_t epoch) const {
    if (epoch < floor_ || closed_.count(epoch))
      throw ProtocolError("stale frame for completed epoch " + std::to_string(epoch));
  }

  bool has_entries(std::uint32_t epoch) const {
    auto it = entries_.lower_bound({epoch, std::string()});
    return it != entries_.end() && it->first.epoch == epoch;
  }

  void close_epoch(std::uint32_t epoch) {
    closed_.insert(epoch);
    while (closed_.count(floor_)) closed_.erase(floor_++);
  }

  void maybe_forward(const TensorKey& key, Entry& e, std::vector<Outgoing>& out) {
    if (e.forwarded || !e.self_ready || e.children_ready < static_cast<int>(children_.size())) return;
    e.forwarded = true;
    if (parent_) {
      out.push_back({*parent_, encode(Readiness{key.epoch, key.name})});
      ++e.sent;
      ++stats_.frames_sent;
    } else {
      global_ready_.push_back(key);
      pending_.emplace_back(arrivals_++, key);
    }
  }

  // Children first, then local execution.
  void relay(const Schedule& s, std::vector<Outgoing>& out) {
    if (!children_.empty()) {
      const Frame f = encode(s);
      for (int c : children_) out.push_back({c, f});
      stats_.frames_sent += children_.size();
    }
    const bool received = parent_.has_value();
    for (const auto& n : s.names) {
      auto& e = entries_[{s.epoch, n}];
      e.scheduled = true;
      e.sent += static_cast<int>(children_.size());
      if (received) ++e.received;
      ++open_[s.epoch];
      executable_.push_back({s.epoch, n});
    }
  }

  int rank_;
  ControlTree tree_;
  std::optional<int> parent_;
  std::vector<int> children_;
  std::map<TensorKey, Entry> entries_;
  std::vector<std::pair<std::uint64_t, TensorKey>> pending_;
  std::uint64_t arrivals_ = 0;
  std::vector<TensorKey> global_ready_;
  std::deque<TensorKey> executable_;
  std::map<std::uint32_t, int> open_;  // scheduled-but-unexecuted count per epoch
  std::set<std::uint32_t> closed_;
  std::uint32_t floor_ = 0;
  MessageStats stats_;
};

}  // namespace dlscale::control
