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
#include <cmath>
#include <filesystem>
#include <future>
#include <numeric>
#include <vector>

#include "dlscale/collectives/oracle.hpp"
#include "dlscale/core/rng.hpp"
#include "dlscale/harness/bench.hpp"
#include "dlscale/harness/config.hpp"
#include "dlscale/harness/rank_engine.hpp"
#include "dlscale/harness/stats.hpp"
#include "dlscale/harness/train.hpp"
#include "dlscale/transport/in_process.hpp"

namespace dlscale::harness {
namespace {

TEST(Stats, PercentilesUseLinearInterpolation) {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  EXPECT_NEAR(percentile(v, 16), 16.84, 1e-12);
  EXPECT_NEAR(percentile(v, 84), 84.16, 1e-12);
  EXPECT_EQ(percentile(v, 0), 1.0);
  EXPECT_EQ(percentile(v, 100), 100.0);
  EXPECT_THROW(percentile({}, 50), ConfigError);
  EXPECT_THROW(percentile(v, 101), ConfigError);
}

TEST(Stats, SustainedMedianAndInterval) {
  const std::vector<double> skewed{10, 10, 10, 100};
  EXPECT_EQ(sustained_stats(skewed).median, 10.0);
  const std::vector<double> flat(7, 3.5);
  const auto s = sustained_stats(flat);
  EXPECT_EQ(s.ci_high - s.ci_low, 0.0);
  EXPECT_EQ(s.steps, 7u);
  EXPECT_THROW(sustained_stats(std::vector<double>{}), ConfigError);

  std::vector<StepRecord> recs{{0, {1.0, 3.0}, 0.1, 0.0}, {1, {2.0, 4.0}, 0.1, 0.0}, {2, {5.0, 5.0}, 0.1, 0.0}};
  EXPECT_EQ(sustained_stats(std::span<const StepRecord>(recs)).median, 3.0);
  recs.push_back({3, {}, 0.1, 0.0});
  EXPECT_THROW(sustained_stats(std::span<const StepRecord>(recs)), ConfigError);
}

ScalingPoint point(int workers, double median) {
  ScalingPoint p;
  p.workers = workers;
  p.per_rank = {median, median, median, 1};
  return p;
}

TEST(Stats, WeakScalingEfficiency) {
  const auto perfect = weak_scaling({point(1, 5.0), point(2, 5.0), point(8, 5.0)});
  for (const auto& p : perfect) EXPECT_DOUBLE_EQ(p.efficiency, 1.0);
  // aggregate throughput at P = 4 is 3.6x the baseline
  const auto pts = weak_scaling({point(1, 10.0), point(4, 9.0)});
  EXPECT_DOUBLE_EQ(pts[1].throughput, 36.0);
  EXPECT_NEAR(pts[1].efficiency, 0.90, 1e-12);
  EXPECT_THROW(weak_scaling({point(2, 1.0)}), ConfigError);
  EXPECT_THROW(weak_scaling({point(1, 0.0)}), ConfigError);
}

TEST(Config, DefaultsAndUnknownKeys) {
  const auto c = parse_run(json::object());
  EXPECT_EQ(c.topology.world_size(), 1);
  EXPECT_EQ(c.net.in_channels, c.data.scene.channels);
  EXPECT_EQ(c.global_batch(), c.local_batch);

  json j = {{"topology", {{"nodes", 2}, {"local_ranks", 3}}}, {"train", {{"local_batch", 4}}}};
  EXPECT_EQ(parse_run(j).global_batch(), 24);

  EXPECT_THROW(parse_run({{"train", {{"stpes", 3}}}}), ConfigError);
  EXPECT_THROW(parse_run({{"topology", {{"gpus_per_node", 6}}}}), ConfigError);
  EXPECT_THROW(parse_run({{"optimizer", {{"lag", 2}}}}), ConfigError);
  EXPECT_THROW(parse_run({{"train", {{"loss_weighting", "focal"}}}}), ConfigError);
  EXPECT_THROW(parse_run({{"backend", {{"kind", "mpi"}}}}), ConfigError);
  EXPECT_THROW(parse_run({{"dataset", {{"height", 30}}}}), ConfigError);
  EXPECT_THROW(parse_run({{"train", {{"steps", "many"}}}}), ConfigError);
  EXPECT_THROW(parse_run(json::array()), ConfigError);
  EXPECT_THROW(load_json("/nonexistent/config.json"), ConfigError);

  EXPECT_THROW(parse_allreduce_bench({{"allreduce", {{"algorithm", "tree"}}}}), ConfigError);
  EXPECT_THROW(parse_pipeline_bench({{"pipeline", {{"queue", 4}}}}), ConfigError);
  EXPECT_THROW(parse_scaling({{"scaling", {{"steps", 1}}}}), ConfigError);
  EXPECT_EQ(parse_stage({{"staging", {{"read_threads", 1}}}}).read.node_bandwidth(), 1.79e9);
}

TEST(Config, SyncCheckStepsAndTopologyScaling) {
  EXPECT_EQ(sync_check_steps(1), (std::vector<std::int64_t>{1}));
  EXPECT_EQ(sync_check_steps(10), (std::vector<std::int64_t>{1, 10}));
  EXPECT_EQ(sync_check_steps(50), (std::vector<std::int64_t>{1, 10, 50}));
  const RankTopology base(1, 4, 2);
  EXPECT_EQ(scaled_topology(base, 16).num_nodes(), 4);
  EXPECT_EQ(scaled_topology(base, 2).num_nodes(), 1);
  EXPECT_EQ(scaled_topology(base, 2).local_ranks(), 2);
  EXPECT_EQ(scaled_topology(base, 1).world_size(), 1);
}

TEST(ControlFrame, RoundTrip) {
  const auto f = encode_control(ControlKind::submit, 77);
  EXPECT_EQ(decode_control(f), std::make_pair(ControlKind::submit, std::uint32_t{77}));
  auto bad = f;
  bad.payload[0] = 9;
  EXPECT_THROW(decode_control(bad), ProtocolError);
  bad = f;
  bad.payload.push_back(0);
  EXPECT_THROW(decode_control(bad), ProtocolError);
}

TEST(RankEngine, AgreesOnOrderAndAveragesOutOfOrderSubmissions) {
  const RankTopology topo(2, 3, 3, 2);
  const int world = topo.world_size();
  transport::LinkModel link;
  link.latency = std::chrono::microseconds(200);
  transport::InProcessFabric fabric(world, link);
  std::vector<std::unique_ptr<transport::InProcessEndpoint>> eps;
  for (int r = 0; r < world; ++r) eps.push_back(fabric.endpoint(r));

  const std::vector<std::string> names{"a", "b", "c", "d", "e"};
  auto input = [](int rank, std::size_t t, std::uint32_t epoch) {
    std::vector<float> v(10 + 7 * t);
    Rng rng(mix_seed(epoch * 100 + t, static_cast<std::uint64_t>(rank)));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    return v;
  };
  struct Out {
    std::vector<std::vector<NamedTensor>> results;
    std::vector<control::TensorKey> order;
    control::MessageStats stats;
  };
  std::vector<std::future<Out>> futs;
  for (int r = 0; r < world; ++r)
    futs.push_back(std::async(std::launch::async, [&, r] {
      RankEngine engine(*eps[static_cast<std::size_t>(r)], topo, std::chrono::seconds(30));
      Out o;
      std::vector<std::future<std::vector<NamedTensor>>> pending;
      for (std::uint32_t epoch = 0; epoch < 3; ++epoch) {
        std::vector<std::size_t> perm(names.size());
        std::iota(perm.begin(), perm.end(), 0);
        Rng rng(mix_seed(epoch, static_cast<std::uint64_t>(r) + 17));
        shuffle(perm, rng);
        std::vector<NamedTensor> ts;
        for (auto t : perm) {
          auto v = input(r, t, epoch);
          ts.emplace_back(names[t], Shape{static_cast<std::int64_t>(v.size())}, std::move(v));
        }
        pending.push_back(engine.submit(epoch, std::move(ts)));
      }
      for (auto& p : pending) o.results.push_back(p.get());
      o.order = engine.executed();
      o.stats = engine.stats();
      engine.stop();
      return o;
    }));
  std::vector<Out> outs;
  for (auto& f : futs) outs.push_back(f.get());

  for (const auto& o : outs) {
    ASSERT_EQ(o.order.size(), 15u);
    EXPECT_TRUE(std::equal(o.order.begin(), o.order.end(), outs[0].order.begin(),
                           [](const auto& a, const auto& b) { return a.epoch == b.epoch && a.name == b.name; }));
    EXPECT_LE(o.stats.max_sent_per_tensor, topo.radix() + 1);
    EXPECT_LE(o.stats.max_received_per_tensor, topo.radix() + 1);
  }
  for (std::uint32_t epoch = 0; epoch < 3; ++epoch)
    for (std::size_t t = 0; t < names.size(); ++t) {
      std::vector<std::vector<float>> in;
      for (int r = 0; r < world; ++r) in.push_back(input(r, t, epoch));
      const auto ref = collectives::oracle_reduce(in, collectives::ReduceOp::mean);
      for (int r = 0; r < world; ++r) {
        const auto& res = outs[static_cast<std::size_t>(r)].results[epoch];
        auto it = std::find_if(res.begin(), res.end(), [&](const auto& x) { return x.name() == names[t]; });
        ASSERT_NE(it, res.end());
        EXPECT_LE(collectives::max_scaled_error(it->values(), ref, in, collectives::ReduceOp::mean), 1e-5);
        const auto& first = outs[0].results[epoch];
        auto same = std::find_if(first.begin(), first.end(), [&](const auto& x) { return x.name() == names[t]; });
        EXPECT_EQ(it->vector(), same->vector());
      }
    }
}

TEST(RankEngine, RejectsDuplicateNamesAndEmptySubmissions) {
  transport::InProcessFabric fabric(1);
  auto ep = fabric.endpoint(0);
  RankEngine engine(*ep, RankTopology(1, 1, 1));
  EXPECT_THROW(engine.submit(0, {}), ConfigError);
  auto fut = engine.submit(0, {NamedTensor("x", {1}), NamedTensor("x", {1})});
  EXPECT_THROW(fut.get(), ProtocolError);
}

RunConfig small_run(int nodes, int local, std::int64_t batch, std::int64_t steps) {
  RunConfig c;
  c.topology = RankTopology(nodes, local, 1, 2);
  c.data.scene.height = 16;
  c.data.scene.width = 16;
  c.data.scene.river_min_length = 4;
  c.data.scene.river_max_length = 10;
  c.data.scenes = 32;
  c.data.validation_scenes = 0;
  c.net.stem_channels = 8;
  c.net.growth = 8;
  c.local_batch = batch;
  c.steps = steps;
  c.seed = 11;
  c.write_checkpoint = false;
  return c;
}

TEST(Train, SingleRankMatchesPlainLoopBitwise) {
  auto cfg = small_run(1, 1, 2, 12);
  cfg.record_trajectory = true;
  const auto data = prepare_data(cfg);
  const auto rep = run_in_process(cfg, data);

  // Plain loop: same init, sample order and normalisation, no transport.
  const model::MiniDenseNet net(cfg.net);
  const auto weights = class_weights(cfg);
  std::vector<optim::LayerParam<float>> params;
  auto init = net.init(mix_seed(cfg.seed, 4));
  for (std::size_t i = 0; i < init.size(); ++i) params.emplace_back(net.params()[i].name, std::move(init[i]));
  SampleOrder order(data.staged[0], 1, cfg.local_batch, mix_seed(cfg.seed, 5));
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    auto [x, y] = model::make_batch(data.train, order.samples(step, 0, cfg.local_batch));
    std::vector<std::vector<float>> vals;
    for (const auto& p : params) vals.push_back(p.weights);
    auto r = model::loss_and_gradients<float>(net, vals, std::move(x), y, weights, 1.0);
    std::vector<double> counts(weights.size(), 0.0);
    for (auto label : y) counts[label] += 1.0;
    double denom = 0.0;
    for (std::size_t c = 0; c < weights.size(); ++c) denom += weights[c] * counts[c];
    ASSERT_EQ(rep.records[static_cast<std::size_t>(step)].loss,
              static_cast<double>(static_cast<float>(r.loss.weighted_sum)) / denom);
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (auto& g : r.grads[i]) g = static_cast<float>(static_cast<double>(g) / denom);
      optim::apply_gradient<float>(params[i], r.grads[i], cfg.optim);
    }
    std::vector<float> flat;
    for (const auto& p : params) flat.insert(flat.end(), p.weights.begin(), p.weights.end());
    ASSERT_EQ(rep.trajectory[static_cast<std::size_t>(step)], flat) << "step " << step;
  }
  EXPECT_EQ(rep.hashes.size(), sync_check_steps(cfg.steps).size());
}

TEST(Train, RepeatedRunsAreBitwiseIdentical) {
  const auto cfg = small_run(2, 2, 1, 4);
  const auto data = prepare_data(cfg);
  const auto a = run_in_process(cfg, data), b = run_in_process(cfg, data);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].loss, b.records[i].loss);
  EXPECT_EQ(a.hashes, b.hashes);
  EXPECT_EQ(a.hashes.size(), 2u);
  EXPECT_LE(a.max_control_sent, cfg.topology.radix() + 1);
}

TEST(Train, LagOneAppliesEachGradientOneStepLate) {
  auto cfg = small_run(1, 2, 1, 6);
  cfg.record_trajectory = true;
  const auto data = prepare_data(cfg);
  const auto lag0 = run_in_process(cfg, data);
  cfg.optim.lag = 1;
  const auto lag1 = run_in_process(cfg, data);
  ASSERT_EQ(lag1.records.size(), 6u);
  // Same weights and batch at step 0, so the first loss is shared.
  EXPECT_EQ(lag0.records[0].loss, lag1.records[0].loss);
  // After step 0 nothing has been applied; after step 1 the step-0 gradient has.
  const model::MiniDenseNet net(cfg.net);
  std::vector<float> init;
  for (const auto& p : net.init(mix_seed(cfg.seed, 4))) init.insert(init.end(), p.begin(), p.end());
  EXPECT_EQ(lag1.trajectory[0], init);
  EXPECT_EQ(lag1.trajectory[1], lag0.trajectory[0]);
  for (const auto& r : lag1.records) EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(Train, ProcessesOverTcpMatchInProcessRun) {
  auto cfg = small_run(1, 2, 1, 3);
  cfg.backend.kind = Backend::tcp;
  cfg.output_dir = std::filesystem::temp_directory_path() / "dlscale_tcp_train_test";
  std::filesystem::remove_all(cfg.output_dir);
  const auto data = prepare_data(cfg);
  const auto tcp = train_run(cfg, data);
  cfg.backend.kind = Backend::in_process;
  const auto local = train_run(cfg, data);
  EXPECT_EQ(tcp.hashes, local.hashes);
  for (std::size_t i = 0; i < tcp.records.size(); ++i) EXPECT_EQ(tcp.records[i].loss, local.records[i].loss);
  write_run_artifacts(cfg, tcp, cfg.output_dir);
  EXPECT_TRUE(std::filesystem::exists(cfg.output_dir / "loss.csv"));
  EXPECT_TRUE(std::filesystem::exists(cfg.output_dir / "summary.json"));
  EXPECT_EQ(load_json(cfg.output_dir / "summary.json")["world_size"].get<int>(), 2);
  std::filesystem::remove_all(cfg.output_dir);
}

TEST(Train, RejectsTooFewStagedSamples) {
  auto cfg = small_run(1, 2, 4, 2);
  cfg.data.per_node_samples = 5;
  const auto data = prepare_data(cfg);
  EXPECT_THROW(run_in_process(cfg, data), ConfigError);
}

TEST(Bench, AllreduceRowsPassOnBothBackends) {
  AllreduceBenchConfig c;
  c.lengths = {1, 17, 5000};
  c.repeats = 2;
  for (auto kind : {Backend::in_process, Backend::tcp}) {
    BackendConfig b;
    b.kind = kind;
    for (const auto& row : bench_allreduce(RankTopology(2, 2, 2), b, c, 4)) {
      EXPECT_TRUE(row.passed(c.tolerance)) << "length " << row.length;
      EXPECT_EQ(row.seconds.steps, 2u);
    }
  }
}

TEST(Bench, PipelineAndStaging) {
  PipelineBenchConfig p;
  p.items = 30;
  p.workers = 2;
  p.produce_ms = 2.0;
  p.consume_ms = 2.0;
  p.payload_floats = 64;
  const auto r = bench_pipeline(p, 1);
  EXPECT_TRUE(r.multiset_ok);
  EXPECT_TRUE(r.bound_ok);

  StageConfig one;
  one.nodes = 1;
  one.files = 6;
  one.per_node = 6;
  const auto trivial = stage_and_verify(one, BackendConfig{}, 2);
  EXPECT_TRUE(trivial.check.ok);
  EXPECT_TRUE(trivial.plan.transfers.empty());

  StageConfig many;
  many.files = 16;
  many.per_node = 12;
  const auto overlap = stage_and_verify(many, BackendConfig{}, 3);
  EXPECT_TRUE(overlap.check.ok);
  EXPECT_EQ(overlap.store_reads, overlap.plan.reads.size());
  EXPECT_GT(overlap.estimate.replication_factor, 1.0);
}

TEST(Bench, WeakScalingSweepCompletes) {
  auto cfg = small_run(1, 1, 1, 2);
  ScalingConfig s;
  s.workers = {1, 2};
  s.steps = 3;
  const auto pts = weak_scaling_sweep(cfg, s);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_DOUBLE_EQ(pts[0].efficiency, 1.0);
  EXPECT_GT(pts[1].efficiency, 0.0);
  EXPECT_GT(training_flops_per_sample(cfg), 0.0);
}

}  // namespace
}  // namespace dlscale::harness
