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

#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "dlscale/data/prefetch_queue.hpp"

namespace dlscale::data {

class PipelineError : public Error {
 public:
  using Error::Error;
};

struct PipelineConfig {
  std::size_t capacity = 4;         // Q
  std::size_t workers = 4;          // W
  std::chrono::microseconds consume_time{0};  // simulated per-item training step
};

/// One consumed item: when the consumer started waiting and when it got it.
struct ConsumeEvent {
  std::size_t item = 0;          // source index
  double wait_start_s = 0.0;     // since pipeline start
  double obtained_s = 0.0;
  double stall_s() const { return obtained_s - wait_start_s; }
};

template <class Out>
struct PipelineResult {
  std::vector<Out> items;  // in consumption order
  std::vector<ConsumeEvent> log;
  std::size_t high_water = 0;
  double elapsed_s = 0.0;

  /// Fraction of consumer time spent waiting, over consumed items past
  /// `warmup` (the interval from the first counted wait to the end).
  double stall_fraction(std::size_t warmup) const {
    if (log.size() <= warmup) return 0.0;
    double stalled = 0.0;
    for (std::size_t i = warmup; i < log.size(); ++i) stalled += log[i].stall_s();
    const double span = elapsed_s - log[warmup].wait_start_s;
    return span > 0.0 ? stalled / span : 0.0;
  }
};

inline void write_csv(std::ostream& os, const std::vector<ConsumeEvent>& log) {
  os << "index,item,wait_start_s,obtained_s,stall_s\n";
  for (std::size_t i = 0; i < log.size(); ++i)
    os << i << ',' << log[i].item << ',' << log[i].wait_start_s << ',' << log[i].obtained_s << ','
       << log[i].stall_s() << '\n';
}

/// Runs `load` on every source index with W worker threads feeding a bounded
/// queue of capacity Q, and one consumer that spends `consume_time` per item.
/// Each worker owns its own state (e.g. file handles), created by `load`
/// itself. A worker exception stops production; the consumer drains what was
/// queued and then the error is rethrown as PipelineError.
template <class Out>
PipelineResult<Out> pipeline_run(std::size_t source_count, const std::function<Out(std::size_t)>& load,
                                 const PipelineConfig& cfg) {
  if (cfg.capacity < 1 || cfg.workers < 1) throw ConfigError("pipeline needs Q >= 1 and W >= 1");
  struct Item {
    std::size_t index;
    Out value;
  };
  PrefetchQueue<Item> queue(cfg.capacity);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> live{cfg.workers};
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  std::exception_ptr err;

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto since = [&](clock::time_point t) { return std::chrono::duration<double>(t - t0).count(); };

  std::vector<std::thread> workers;
  workers.reserve(cfg.workers);
  for (std::size_t w = 0; w < cfg.workers; ++w) {
    workers.emplace_back([&] {
      try {
        for (;;) {
          if (failed) break;
          const std::size_t i = next.fetch_add(1);
          if (i >= source_count) break;
          if (!queue.push(Item{i, load(i)})) break;
        }
      } catch (...) {
        std::lock_guard lk(err_mu);
        if (!err) err = std::current_exception();
        failed = true;
      }
      if (live.fetch_sub(1) == 1) queue.close();
    });
  }

  PipelineResult<Out> res;
  for (;;) {
    const auto wait_start = clock::now();
    auto item = queue.pop();
    if (!item) break;
    const auto got = clock::now();
    res.log.push_back({item->index, since(wait_start), since(got)});
    res.items.push_back(std::move(item->value));
    if (cfg.consume_time.count() > 0) std::this_thread::sleep_for(cfg.consume_time);
  }
  for (auto& t : workers) t.join();
  res.elapsed_s = since(clock::now());
  res.high_water = queue.high_water();
  if (err) {
    try {
      std::rethrow_exception(err);
    } catch (const std::exception& e) {
      throw PipelineError(std::string("pipeline worker failed: ") + e.what());
    }
  }
  return res;
}

}  // namespace dlscale::data
