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
#include <future>
#include <memory>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "dlscale/collectives/allreduce.hpp"
#include "dlscale/collectives/communicator.hpp"
#include "dlscale/collectives/oracle.hpp"
#include "dlscale/core/rng.hpp"
#include "dlscale/data/execute.hpp"
#include "dlscale/data/pipeline.hpp"
#include "dlscale/data/plan_json.hpp"
#include "dlscale/data/staging.hpp"
#include "dlscale/flops/flops.hpp"
#include "dlscale/harness/config.hpp"
#include "dlscale/harness/stats.hpp"
#include "dlscale/harness/train.hpp"
#include "dlscale/transport/in_process.hpp"
#include "dlscale/transport/tcp.hpp"

namespace dlscale::harness {

/// Endpoints for every rank of one process, owned together.
class EndpointGroup {
 public:
  EndpointGroup(Backend kind, int world, const transport::LinkModel& link) {
    if (kind == Backend::tcp) {
      for (auto& e : transport::make_loopback_group(world, link)) owned_.push_back(std::move(e));
    } else {
      fabric_ = std::make_unique<transport::InProcessFabric>(world, link);
      for (int r = 0; r < world; ++r) owned_.push_back(fabric_->endpoint(r));
    }
    for (auto& e : owned_) raw_.push_back(e.get());
  }

  std::vector<transport::Endpoint*>& endpoints() { return raw_; }

 private:
  std::unique_ptr<transport::InProcessFabric> fabric_;
  std::vector<std::unique_ptr<transport::Endpoint>> owned_;
  std::vector<transport::Endpoint*> raw_;
};

// ---------------------------------------------------------------- all-reduce

struct AllreduceBenchConfig {
  std::vector<std::size_t> lengths{1, 17, 1000, 1000000};
  int repeats = 3;
  bool hybrid = true;
  collectives::ReduceOp op = collectives::ReduceOp::sum;
  double tolerance = 1e-5;
};

inline AllreduceBenchConfig parse_allreduce_bench(const json& doc) {
  Fields f(doc.contains("allreduce") ? doc.at("allreduce") : json::object(), "allreduce");
  AllreduceBenchConfig c;
  c.lengths = f.get<std::vector<std::size_t>>("lengths", c.lengths);
  c.repeats = f.get<int>("repeats", c.repeats);
  const auto algo = f.get<std::string>("algorithm", "hybrid");
  if (algo != "hybrid" && algo != "ring") throw ConfigError("allreduce.algorithm must be 'hybrid' or 'ring'");
  c.hybrid = algo == "hybrid";
  const auto op = f.get<std::string>("op", "sum");
  if (op != "sum" && op != "mean") throw ConfigError("allreduce.op must be 'sum' or 'mean'");
  c.op = op == "sum" ? collectives::ReduceOp::sum : collectives::ReduceOp::mean;
  c.tolerance = f.get<double>("tolerance", c.tolerance);
  f.finish();
  if (c.repeats < 1 || c.lengths.empty()) throw ConfigError("allreduce needs lengths and repeats >= 1");
  return c;
}

struct AllreduceRow {
  std::size_t length = 0;
  SustainedStats seconds;  // slowest rank per repeat
  double bus_gbps = 0.0;   // 2(p-1)/p * bytes / median time
  double max_error = 0.0;  // scaled error vs the sequential oracle
  bool identical = true;   // byte-identical results on every rank
  bool passed(double tolerance) const { return identical && max_error <= tolerance; }
};

inline std::vector<float> bench_input(std::uint64_t seed, int rank, std::size_t length) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(rank) * 1000003ull + length));
  std::vector<float> v(length);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

/// Runs every length `repeats` times on all ranks and checks the results
/// against the sequential oracle and each other.
inline std::vector<AllreduceRow> bench_allreduce(const RankTopology& topo, const BackendConfig& backend,
                                                 const AllreduceBenchConfig& cfg, std::uint64_t seed) {
  const int world = topo.world_size();
  EndpointGroup group(backend.kind, world, backend.link());
  struct RankRun {
    std::vector<std::vector<double>> seconds;       // [length][repeat]
    std::vector<std::vector<float>> results;        // last repeat per length
  };
  std::vector<std::future<RankRun>> futs;
  for (int r = 0; r < world; ++r) {
    futs.push_back(std::async(std::launch::async, [&, r] {
      collectives::Communicator comm(*group.endpoints()[static_cast<std::size_t>(r)]);
      std::vector<int> peers(static_cast<std::size_t>(world));
      std::iota(peers.begin(), peers.end(), 0);
      RankRun run;
      std::uint32_t epoch = 0;
      for (auto len : cfg.lengths) {
        run.seconds.emplace_back();
        for (int k = 0; k < cfg.repeats; ++k) {
          auto data = bench_input(seed, r, len);
          const auto t0 = std::chrono::steady_clock::now();
          if (cfg.hybrid)
            collectives::hybrid_allreduce(comm, data, topo, epoch, "bench", cfg.op);
          else
            collectives::ring_allreduce(comm, data, peers, epoch, "bench", cfg.op);
          run.seconds.back().push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
          ++epoch;
          if (k + 1 == cfg.repeats) run.results.push_back(std::move(data));
        }
      }
      return run;
    }));
  }
  std::vector<RankRun> runs;
  for (auto& f : futs) runs.push_back(f.get());

  std::vector<AllreduceRow> rows;
  for (std::size_t li = 0; li < cfg.lengths.size(); ++li) {
    AllreduceRow row;
    row.length = cfg.lengths[li];
    std::vector<double> slowest(static_cast<std::size_t>(cfg.repeats), 0.0);
    for (const auto& run : runs)
      for (std::size_t k = 0; k < slowest.size(); ++k) slowest[k] = std::max(slowest[k], run.seconds[li][k]);
    row.seconds = sustained_stats(slowest);
    const double bytes = static_cast<double>(row.length) * sizeof(float);
    if (row.seconds.median > 0.0)
      row.bus_gbps = 2.0 * (world - 1) / world * bytes / row.seconds.median / 1e9;
    std::vector<std::vector<float>> inputs;
    for (int r = 0; r < world; ++r) inputs.push_back(bench_input(seed, r, row.length));
    const auto ref = collectives::oracle_reduce(inputs, cfg.op);
    for (const auto& run : runs) {
      row.identical = row.identical && run.results[li] == runs.front().results[li];
      row.max_error = std::max(row.max_error, collectives::max_scaled_error(run.results[li], ref, inputs, cfg.op));
    }
    rows.push_back(row);
  }
  return rows;
}

// ------------------------------------------------------------------ pipeline

struct PipelineBenchConfig {
  std::size_t items = 200;
  std::size_t capacity = 4;
  std::size_t workers = 4;
  double produce_ms = 4.0;  // per-item load time of one worker
  double consume_ms = 1.0;  // simulated training step
  std::size_t payload_floats = 16384;
};

inline PipelineBenchConfig parse_pipeline_bench(const json& doc) {
  Fields f(doc.contains("pipeline") ? doc.at("pipeline") : json::object(), "pipeline");
  PipelineBenchConfig c;
  c.items = f.get<std::size_t>("items", c.items);
  c.capacity = f.get<std::size_t>("capacity", c.capacity);
  c.workers = f.get<std::size_t>("workers", c.workers);
  c.produce_ms = f.get<double>("produce_ms", c.produce_ms);
  c.consume_ms = f.get<double>("consume_ms", c.consume_ms);
  c.payload_floats = f.get<std::size_t>("payload_floats", c.payload_floats);
  f.finish();
  if (c.produce_ms < 0.0 || c.consume_ms < 0.0) throw ConfigError("pipeline times must be >= 0");
  return c;
}

struct PipelineBenchResult {
  data::PipelineResult<std::size_t> run;
  bool multiset_ok = false;
  bool bound_ok = false;
  double stall_fraction = 0.0;
};

/// Each worker "reads" an item by sleeping `produce_ms` and filling a seeded
/// buffer; the consumer sleeps `consume_ms` per item.
inline PipelineBenchResult bench_pipeline(const PipelineBenchConfig& c, std::uint64_t seed) {
  data::PipelineConfig pc{c.capacity, c.workers,
                          std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double, std::milli>(c.consume_ms))};
  const auto produce = std::chrono::duration<double, std::milli>(c.produce_ms);
  std::function<std::size_t(std::size_t)> load = [&](std::size_t i) {
    const auto until = std::chrono::steady_clock::now() + produce;
    Rng rng(mix_seed(seed, i));
    std::vector<float> buf(c.payload_floats);
    for (auto& x : buf) x = static_cast<float>(rng.uniform());
    std::this_thread::sleep_until(until);
    return i;
  };
  PipelineBenchResult r{data::pipeline_run<std::size_t>(c.items, load, pc), false, false, 0.0};
  auto got = r.run.items;
  std::sort(got.begin(), got.end());
  std::vector<std::size_t> want(c.items);
  std::iota(want.begin(), want.end(), 0);
  r.multiset_ok = got == want;
  r.bound_ok = r.run.high_water <= c.capacity;
  r.stall_fraction = r.run.stall_fraction(c.capacity);
  return r;
}

// ------------------------------------------------------------------- staging

struct StageConfig {
  int nodes = 8;
  std::uint32_t files = 64;
  std::uint64_t file_bytes = 1u << 20;  // modeled size
  std::uint32_t samples_per_file = 1;
  std::uint64_t per_node = 32;
  std::size_t payload_bytes = 4096;     // bytes actually moved per file
  data::ReadModel read{1.79e9, 8, 11.98e9};
  double link_gbps = 12.5;
};

inline StageConfig parse_stage(const json& doc) {
  Fields f(doc.contains("staging") ? doc.at("staging") : json::object(), "staging");
  StageConfig c;
  c.nodes = f.get<int>("nodes", c.nodes);
  c.files = f.get<std::uint32_t>("files", c.files);
  c.file_bytes = f.get<std::uint64_t>("file_bytes", c.file_bytes);
  c.samples_per_file = f.get<std::uint32_t>("samples_per_file", c.samples_per_file);
  c.per_node = f.get<std::uint64_t>("per_node_samples", c.per_node);
  c.payload_bytes = f.get<std::size_t>("payload_bytes", c.payload_bytes);
  c.read.threads = f.get<int>("read_threads", c.read.threads);
  c.read.per_thread_bytes_per_s = f.get<double>("per_thread_gbps", 1.79) * 1e9;
  c.read.node_cap_bytes_per_s = f.get<double>("node_cap_gbps", 11.98) * 1e9;
  c.link_gbps = f.get<double>("link_gbps", c.link_gbps);
  f.finish();
  return c;
}

struct StageReport {
  data::StagingPlan plan;
  data::StagingEstimate estimate;
  data::StagingCheck check;
  std::uint64_t store_reads = 0;
};

/// Plans the staging, executes it over the transport with one actor per
/// node, and verifies every node's holdings.
inline StageReport stage_and_verify(const StageConfig& c, const BackendConfig& backend, std::uint64_t seed) {
  const auto catalog = data::DatasetCatalog::uniform(c.files, c.file_bytes, c.samples_per_file);
  StageReport r;
  r.plan = data::plan_staging(data::assign_samples(catalog, c.nodes, c.per_node, seed), catalog);
  r.estimate = data::estimate_staging(r.plan, c.read, c.link_gbps * 1e9);
  data::SharedStore store(catalog, c.payload_bytes, seed);
  EndpointGroup group(backend.kind, c.nodes, backend.link());
  const auto holdings = data::execute_plan(r.plan, store, group.endpoints());
  r.check = data::verify_staging(r.plan, store, holdings);
  r.store_reads = store.total_reads();
  return r;
}

// ------------------------------------------------------------------- scaling

struct ScalingConfig {
  std::vector<int> workers{1, 2, 4, 8, 16};
  std::int64_t steps = 6;
};

inline ScalingConfig parse_scaling(const json& doc) {
  Fields f(doc.contains("scaling") ? doc.at("scaling") : json::object(), "scaling");
  ScalingConfig c;
  c.workers = f.get<std::vector<int>>("workers", c.workers);
  c.steps = f.get<std::int64_t>("steps", c.steps);
  f.finish();
  if (c.workers.empty() || c.steps < 2) throw ConfigError("scaling needs workers and at least 2 steps");
  return c;
}

/// Topology for P workers: whole nodes of the base config's size when P is a
/// multiple of it, otherwise a single node of P ranks.
inline RankTopology scaled_topology(const RankTopology& base, int p) {
  const int g = base.local_ranks();
  if (p >= g && p % g == 0) return RankTopology(p / g, g, std::min(base.lanes(), g), base.radix());
  return RankTopology(1, p, std::min(base.lanes(), p), base.radix());
}

inline double training_flops_per_sample(const RunConfig& c) {
  const model::MiniDenseNet net(c.net);
  const std::map<std::string, Shape> shapes{
      {"input", {c.local_batch, c.data.scene.channels, c.data.scene.height, c.data.scene.width}}};
  return flops::count_graph(net.op_graph(true), shapes, c.local_batch, true).per_sample();
}

/// Weak-scaling sweep: the local batch stays fixed while the worker count
/// grows.
inline std::vector<ScalingPoint> weak_scaling_sweep(const RunConfig& base, const ScalingConfig& s) {
  std::vector<ScalingPoint> pts;
  for (int p : s.workers) {
    RunConfig c = base;
    c.topology = scaled_topology(base.topology, p);
    c.steps = s.steps;
    c.validate_each_epoch = false;
    c.data.validation_scenes = 0;
    const auto data = prepare_data(c);
    const auto rep = c.backend.kind == Backend::tcp ? run_tcp_threads(c, data) : run_in_process(c, data);
    ScalingPoint pt;
    pt.workers = p;
    pt.per_rank = rep.throughput;
    pts.push_back(pt);
  }
  return weak_scaling(std::move(pts));
}

}  // namespace dlscale::harness
