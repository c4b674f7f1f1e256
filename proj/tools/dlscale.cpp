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

// Command line front end: every subcommand reads one JSON config, writes its
// CSV/JSON outputs into the run directory and exits 0 only when all of its
// internal verifications pass.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>

#include "dlscale/core/op_graph_json.hpp"
#include "dlscale/flops/flops.hpp"
#include "dlscale/harness/bench.hpp"
#include "dlscale/harness/config.hpp"
#include "dlscale/harness/train.hpp"
#include "dlscale/model/dataset.hpp"
#include "dlscale/model/io.hpp"

namespace fs = std::filesystem;
using dlscale::harness::json;

namespace {

enum Exit { kOk = 0, kVerificationFailed = 1, kBadConfig = 2, kRuntimeError = 3 };

struct Context {
  json doc;
  fs::path out;
  std::uint64_t seed = 1;
};

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p);
  f << j.dump(2) << '\n';
  if (!f) throw dlscale::Error("cannot write " + p.string());
}

int check(bool ok, const std::string& what) {
  if (ok) {
    spdlog::info("verified: {}", what);
    return kOk;
  }
  spdlog::error("verification failed: {}", what);
  return kVerificationFailed;
}

int cmd_gen_data(const Context& ctx) {
  const auto run = dlscale::harness::parse_run(ctx.doc);
  const auto scenes = dlscale::model::gen_dataset(run.data.scene, run.data.scenes, dlscale::mix_seed(run.seed, 1));
  const auto dir = ctx.out / "data";
  fs::create_directories(dir);
  bool roundtrip = true;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto p = dir / fmt::format("scene_{:06d}.dlsc", i);
    dlscale::model::write_scene(p, scenes[i]);
    const auto back = dlscale::model::read_scene(p);
    roundtrip = roundtrip && back.input == scenes[i].input && back.labels == scenes[i].labels;
  }
  const auto freq = dlscale::model::label_frequencies(scenes);
  const auto& want = run.data.scene.frequencies;
  bool within = true;
  for (std::size_t c = 0; c < 3; ++c) within = within && std::abs(freq[c] - want[c]) <= 0.002;
  write_json(ctx.out / "dataset.json", {{"scenes", scenes.size()},
                                        {"requested_frequencies", want},
                                        {"measured_frequencies", freq},
                                        {"directory", dir.string()}});
  spdlog::info("wrote {} scenes, frequencies {:.5f} {:.5f} {:.5f}", scenes.size(), freq[0], freq[1], freq[2]);
  return check(roundtrip, "scene files read back identically") | check(within, "label frequencies within 0.2 points");
}

int cmd_stage(const Context& ctx) {
  const auto cfg = dlscale::harness::parse_stage(ctx.doc);
  const auto backend = dlscale::harness::parse_backend(ctx.doc.value("backend", json::object()));
  const auto rep = dlscale::harness::stage_and_verify(cfg, backend, ctx.seed);
  write_json(ctx.out / "plan.json", dlscale::data::to_json(rep.plan));
  auto est = dlscale::data::to_json(rep.estimate);
  est["node_read_gbps"] = cfg.read.node_bandwidth() / 1e9;
  est["single_thread_read_gbps"] = cfg.read.per_thread_bytes_per_s / 1e9;
  est["store_reads"] = rep.store_reads;
  est["verified"] = rep.check.ok;
  est["problems"] = rep.check.problems;
  write_json(ctx.out / "staging.json", est);
  spdlog::info("staging: {} files read once, replication factor {:.2f}, makespan {:.3f} s", rep.plan.reads.size(),
               rep.estimate.replication_factor, rep.estimate.makespan_s);
  for (const auto& p : rep.check.problems) spdlog::error("{}", p);
  return check(rep.check.ok, "every node holds its assignment and every file was read once");
}

int cmd_train(const Context& ctx) {
  auto cfg = dlscale::harness::parse_run(ctx.doc);
  cfg.output_dir = ctx.out;
  const auto data = dlscale::harness::prepare_data(cfg);
  spdlog::info("training {} ranks x local batch {} for {} steps (lag {})", cfg.topology.world_size(), cfg.local_batch,
               cfg.steps, cfg.optim.lag);
  const auto rep = dlscale::harness::train_run(cfg, data);
  dlscale::harness::write_run_artifacts(cfg, rep, ctx.out);
  const double fps = dlscale::harness::training_flops_per_sample(cfg);
  auto summary = dlscale::harness::report_to_json(cfg, rep);
  summary["flops_per_sample"] = fps;
  summary["sustained_flops_per_s"] =
      dlscale::flops::flops_to_rate(fps, rep.throughput.median * cfg.topology.world_size());
  write_json(ctx.out / "summary.json", summary);
  for (std::size_t i = 0; i < rep.records.size(); i += static_cast<std::size_t>(std::max<std::int64_t>(1, cfg.log_every)))
    spdlog::info("step {} loss {:.4f}", rep.records[i].step, rep.records[i].loss);
  for (const auto& e : rep.evals)
    spdlog::info("validation after step {}: IoU bg {:.3f} ar {:.3f} tc {:.3f}", e.step, e.iou[0], e.iou[1], e.iou[2]);
  bool finite = true;
  for (const auto& r : rep.records) finite = finite && std::isfinite(r.loss);
  const auto expected_checks = dlscale::harness::sync_check_steps(cfg.steps).size();
  return check(rep.hashes.size() == expected_checks, "parameter hashes identical on all ranks") |
         check(finite, "losses finite");
}

int cmd_bench_allreduce(const Context& ctx) {
  const auto cfg = dlscale::harness::parse_allreduce_bench(ctx.doc);
  const auto topo = dlscale::harness::parse_topology(ctx.doc.value("topology", json::object()));
  const auto backend = dlscale::harness::parse_backend(ctx.doc.value("backend", json::object()));
  const auto rows = dlscale::harness::bench_allreduce(topo, backend, cfg, ctx.seed);
  std::ofstream f(ctx.out / "allreduce.csv");
  f << "length,median_s,p16_s,p84_s,bus_gbps,max_scaled_error,identical\n";
  bool ok = true;
  for (const auto& r : rows) {
    f << r.length << ',' << r.seconds.median << ',' << r.seconds.ci_low << ',' << r.seconds.ci_high << ','
      << r.bus_gbps << ',' << r.max_error << ',' << r.identical << '\n';
    spdlog::info("length {:>9}: median {:.6f} s, error {:.2e}, identical {}", r.length, r.seconds.median, r.max_error,
                 r.identical);
    ok = ok && r.passed(cfg.tolerance);
  }
  return check(ok, "all-reduce matches the oracle and is identical on every rank");
}

int cmd_bench_pipeline(const Context& ctx) {
  const auto cfg = dlscale::harness::parse_pipeline_bench(ctx.doc);
  const auto r = dlscale::harness::bench_pipeline(cfg, ctx.seed);
  {
    std::ofstream f(ctx.out / "pipeline.csv");
    dlscale::data::write_csv(f, r.run.log);
  }
  write_json(ctx.out / "pipeline.json", {{"items", r.run.items.size()},
                                         {"capacity", cfg.capacity},
                                         {"workers", cfg.workers},
                                         {"high_water", r.run.high_water},
                                         {"elapsed_s", r.run.elapsed_s},
                                         {"stall_fraction_after_warmup", r.stall_fraction}});
  spdlog::info("pipeline: {} items in {:.3f} s, stall fraction {:.4f}", r.run.items.size(), r.run.elapsed_s,
               r.stall_fraction);
  return check(r.multiset_ok, "consumer saw every item exactly once") |
         check(r.bound_ok, "queue occupancy stayed within capacity");
}

int cmd_flops(const Context& ctx) {
  dlscale::harness::Fields f(ctx.doc.value("flops", json::object()), "flops");
  const bool training = f.get<bool>("training", false);
  const double rate = f.get<double>("samples_per_second", 0.0);
  std::int64_t batch = f.get<std::int64_t>("batch", 0);
  dlscale::OpGraph graph;
  std::map<std::string, dlscale::Shape> shapes;
  if (f.has("graph")) {
    auto doc = dlscale::graph_from_json(f.section("graph"));
    graph = std::move(doc.graph);
    shapes = std::move(doc.input_shapes);
  } else {
    const auto run = dlscale::harness::parse_run(ctx.doc);
    const dlscale::model::MiniDenseNet net(run.net);
    graph = net.op_graph(true);
    if (batch == 0) batch = run.local_batch;
    shapes["input"] = {batch, run.data.scene.channels, run.data.scene.height, run.data.scene.width};
  }
  f.finish();
  const auto rep = dlscale::flops::count_graph(graph, shapes, batch, training);
  auto j = dlscale::flops::to_json(rep);
  j["samples_per_second"] = rate;
  j["flops_per_s"] = dlscale::flops::flops_to_rate(rep, rate);
  write_json(ctx.out / "flops.json", j);
  spdlog::info("{} FLOPs total, {:.4g} per sample", rep.total, rep.per_sample());
  std::int64_t sum = 0;
  for (const auto& n : rep.nodes) sum += n.flops;
  return check(sum == rep.total, "total equals the sum over nodes");
}

int cmd_scaling(const Context& ctx) {
  auto run = dlscale::harness::parse_run(ctx.doc);
  const auto s = dlscale::harness::parse_scaling(ctx.doc);
  const auto pts = dlscale::harness::weak_scaling_sweep(run, s);
  std::ofstream f(ctx.out / "scaling.csv");
  f << "workers,per_rank_median,per_rank_p16,per_rank_p84,throughput,efficiency,efficiency_p16,efficiency_p84\n";
  json j = json::array();
  for (const auto& p : pts) {
    f << p.workers << ',' << p.per_rank.median << ',' << p.per_rank.ci_low << ',' << p.per_rank.ci_high << ','
      << p.throughput << ',' << p.efficiency << ',' << p.efficiency_low << ',' << p.efficiency_high << '\n';
    j.push_back({{"workers", p.workers}, {"throughput", p.throughput}, {"efficiency", p.efficiency},
                 {"efficiency_ci", {p.efficiency_low, p.efficiency_high}}});
    spdlog::info("P={:>2}: {:.2f} samples/s total, efficiency {:.3f} [{:.3f}, {:.3f}]", p.workers, p.throughput,
                 p.efficiency, p.efficiency_low, p.efficiency_high);
  }
  write_json(ctx.out / "scaling.json", j);
  return check(pts.size() == s.workers.size(), "every sweep point completed");
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* lvl = std::getenv("DLSCALE_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));

  CLI::App app{"dlscale: desk-scale data-parallel training experiments"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir;
  const std::map<std::string, std::function<int(const Context&)>> commands{
      {"gen-data", cmd_gen_data},         {"stage", cmd_stage},
      {"train", cmd_train},               {"bench-allreduce", cmd_bench_allreduce},
      {"bench-pipeline", cmd_bench_pipeline}, {"flops", cmd_flops},
      {"scaling", cmd_scaling}};
  const std::map<std::string, std::string> help{
      {"gen-data", "generate the synthetic dataset as scene files"},
      {"stage", "plan, execute and verify read-once data staging"},
      {"train", "run synchronous data-parallel training"},
      {"bench-allreduce", "time and verify all-reduce across message sizes"},
      {"bench-pipeline", "run the prefetching input pipeline and report stalls"},
      {"flops", "count FLOPs of a graph or of the configured network"},
      {"scaling", "weak-scaling sweep over worker counts"}};
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("-c,--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--output-dir", out_dir, "run directory (overrides output_dir in the config)");
  }
  CLI11_PARSE(app, argc, argv);

  try {
    Context ctx;
    ctx.doc = dlscale::harness::load_json(config_path);
    ctx.seed = ctx.doc.value("seed", std::uint64_t{1});
    ctx.out = out_dir.empty() ? fs::path(ctx.doc.value("output_dir", std::string("run"))) : fs::path(out_dir);
    fs::create_directories(ctx.out);
    const auto& name = app.get_subcommands().front()->get_name();
    return commands.at(name)(ctx);
  } catch (const dlscale::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kBadConfig;
  } catch (const dlscale::VerificationError& e) {
    spdlog::error("verification failed: {}", e.what());
    return kVerificationFailed;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeError;
  }
}
