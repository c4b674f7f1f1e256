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
#include <exception>
#include <future>
#include <iterator>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dlscale/collectives/allreduce.hpp"
#include "dlscale/collectives/communicator.hpp"
#include "dlscale/control/coordinator.hpp"
#include "dlscale/control/tree.hpp"
#include "dlscale/core/bytes.hpp"
#include "dlscale/core/error.hpp"
#include "dlscale/core/tensor.hpp"
#include "dlscale/core/topology.hpp"
#include "dlscale/transport/endpoint.hpp"

namespace dlscale::harness {

enum class ControlKind : std::uint8_t { submit = 1, shutdown = 2 };

/// Control payload: kind u8 | epoch u32. Only ever sent rank-to-self to wake
/// the communication thread.
inline transport::Frame encode_control(ControlKind kind, std::uint32_t epoch) {
  transport::Frame f{transport::MsgType::control, 0, {}};
  ByteWriter w(f.payload);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u32(epoch);
  return f;
}

inline std::pair<ControlKind, std::uint32_t> decode_control(const transport::Frame& f) {
  ByteReader r(f.payload);
  const auto kind = r.u8();
  const auto epoch = r.u32();
  if (!r.done()) throw ProtocolError("trailing bytes in control frame");
  if (kind != 1 && kind != 2) throw ProtocolError("unknown control kind " + std::to_string(kind));
  return {static_cast<ControlKind>(kind), epoch};
}

/// Per-rank communication actor. A dedicated thread owns the endpoint, the
/// control-plane coordinator and the collective communicator; the caller
/// submits named tensors per epoch and receives the reduced tensors through
/// a future. Tensors are reduced in the order the control plane agrees on,
/// which is identical on every rank.
class RankEngine {
 public:
  RankEngine(transport::Endpoint& ep, RankTopology topo, std::chrono::milliseconds timeout = std::chrono::seconds(120))
      : ep_(ep), topo_(topo), comm_(ep, timeout), coord_(ep.rank(), control::ControlTree(topo.world_size(), topo.radix())) {
    if (ep.world_size() != topo.world_size())
      throw ConfigError("endpoint world size does not match the topology");
    worker_ = std::thread([this] { run(); });
  }

  RankEngine(const RankEngine&) = delete;
  RankEngine& operator=(const RankEngine&) = delete;

  ~RankEngine() {
    try {
      stop();
    } catch (...) {
    }
  }

  int rank() const { return ep_.rank(); }

  /// Queues `tensors` for reduction in `epoch`. Names must be unique within
  /// the epoch and the same set must be submitted by every rank.
  std::future<std::vector<NamedTensor>> submit(std::uint32_t epoch, std::vector<NamedTensor> tensors,
                                               collectives::ReduceOp op = collectives::ReduceOp::mean) {
    if (tensors.empty()) throw ConfigError("nothing to reduce");
    Submission s{epoch, std::move(tensors), op, {}};
    auto fut = s.done.get_future();
    {
      std::lock_guard lk(mu_);
      if (failure_) std::rethrow_exception(failure_);
      if (stopping_) throw TransportError("rank engine stopped");
      inbox_.push_back(std::move(s));
    }
    ep_.send(ep_.rank(), encode_control(ControlKind::submit, epoch));
    return fut;
  }

  /// Stops the communication thread; outstanding submissions fail.
  void stop() {
    {
      std::lock_guard lk(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    try {
      ep_.send(ep_.rank(), encode_control(ControlKind::shutdown, 0));
    } catch (const Error&) {
    }
    if (worker_.joinable()) worker_.join();
  }

  control::MessageStats stats() const {
    std::lock_guard lk(mu_);
    return stats_;
  }

  /// Reduction order observed so far.
  std::vector<control::TensorKey> executed() const {
    std::lock_guard lk(mu_);
    return executed_;
  }

 private:
  struct Submission {
    std::uint32_t epoch;
    std::vector<NamedTensor> tensors;
    collectives::ReduceOp op;
    std::promise<std::vector<NamedTensor>> done;
  };

  struct Epoch {
    std::vector<NamedTensor> tensors;
    std::map<std::string, std::size_t> index;
    collectives::ReduceOp op;
    std::size_t remaining = 0;
    std::promise<std::vector<NamedTensor>> done;
  };

  void send_all(const std::vector<control::Outgoing>& out) {
    for (const auto& o : out) ep_.send(o.dst, o.frame);
  }

  void accept_submissions() {
    std::deque<Submission> batch;
    {
      std::lock_guard lk(mu_);
      batch.swap(inbox_);
    }
    while (!batch.empty()) {
      Submission s = std::move(batch.front());
      batch.pop_front();
      std::map<std::string, std::size_t> index;
      std::string error;
      if (epochs_.count(s.epoch)) error = "epoch " + std::to_string(s.epoch) + " submitted twice";
      for (std::size_t i = 0; i < s.tensors.size() && error.empty(); ++i)
        if (!index.emplace(s.tensors[i].name(), i).second) error = "duplicate tensor name '" + s.tensors[i].name() + "'";
      if (!error.empty()) {
        // Peers may already wait on this epoch, so the engine fails as a whole.
        const auto e = std::make_exception_ptr(ProtocolError(error));
        s.done.set_exception(e);
        std::lock_guard lk(mu_);
        inbox_.insert(inbox_.begin(), std::make_move_iterator(batch.begin()), std::make_move_iterator(batch.end()));
        std::rethrow_exception(e);
      }
      Epoch e{std::move(s.tensors), std::move(index), s.op, 0, std::move(s.done)};
      e.remaining = e.tensors.size();
      auto& slot = epochs_.emplace(s.epoch, std::move(e)).first->second;
      for (const auto& t : slot.tensors) send_all(coord_.mark_ready(s.epoch, t.name()));
    }
  }

  void execute(const control::TensorKey& key) {
    auto it = epochs_.find(key.epoch);
    if (it == epochs_.end()) throw ProtocolError("scheduled tensor for unknown epoch " + std::to_string(key.epoch));
    Epoch& e = it->second;
    auto& t = e.tensors.at(e.index.at(key.name));
    collectives::hybrid_allreduce(comm_, t.mutable_values(), topo_, key.epoch, key.name, e.op);
    {
      std::lock_guard lk(mu_);
      executed_.push_back(key);
      stats_ = coord_.stats();
    }
    if (--e.remaining == 0) {
      e.done.set_value(std::move(e.tensors));
      epochs_.erase(it);
    }
  }

  void run() {
    try {
      for (;;) {
        auto f = comm_.next_message(std::chrono::milliseconds(100));
        if (f) {
          if (f->type == transport::MsgType::control) {
            const auto [kind, epoch] = decode_control(*f);
            if (kind == ControlKind::shutdown) break;
            accept_submissions();
          } else {
            send_all(coord_.on_frame(*f));
          }
        }
        if (coord_.is_root()) send_all(coord_.emit_schedule());
        while (coord_.has_executable()) execute(coord_.pop_executable());
      }
      fail(std::make_exception_ptr(TransportError("rank engine stopped with reductions outstanding")));
    } catch (...) {
      fail(std::current_exception());
    }
  }

  void fail(std::exception_ptr e) {
    std::deque<Submission> orphans;
    {
      std::lock_guard lk(mu_);
      if (!failure_ && !(epochs_.empty() && inbox_.empty())) failure_ = e;
      orphans.swap(inbox_);
    }
    for (auto& s : orphans) s.done.set_exception(e);
    for (auto& [epoch, st] : epochs_) st.done.set_exception(e);
    epochs_.clear();
  }

  transport::Endpoint& ep_;
  RankTopology topo_;
  collectives::Communicator comm_;
  control::Coordinator coord_;

  mutable std::mutex mu_;
  std::deque<Submission> inbox_;
  bool stopping_ = false;
  std::exception_ptr failure_;
  control::MessageStats stats_;
  std::vector<control::TensorKey> executed_;

  std::map<std::uint32_t, Epoch> epochs_;  // comm thread only
  std::thread worker_;
};

}  // namespace dlscale::harness
