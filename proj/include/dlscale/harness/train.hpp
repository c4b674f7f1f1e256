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

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dlscale/core/bytes.hpp"
#include "dlscale/core/error.hpp"
#include "dlscale/core/rng.hpp"
#include "dlscale/data/staging.hpp"
#include "dlscale/harness/config.hpp"
#include "dlscale/harness/rank_engine.hpp"
#include "dlscale/harness/stats.hpp"
#include "dlscale/model/dataset.hpp"
#include "dlscale/model/io.hpp"
#include "dlscale/model/metrics.hpp"
#include "dlscale/model/net.hpp"
#include "dlscale/optimizer/optimizer.hpp"
#include "dlscale/transport/in_process.hpp"
#include "dlscale/transport/tcp.hpp"

namespace dlscale::harness {

inline constexpr const char* kLossStatsName = "loss.stats";
inline constexpr const char* kHashCheckName = "check.hash";

/// Training and validation scenes plus the per-node staged sample lists.
struct TrainingData {
  std::vector<model::SyntheticScene> train;
  std::vector<model::SyntheticScene> validation;
  data::Assignment staged;  // per node, sorted scene indices
};

inline TrainingData prepare_data(const RunConfig& c) {
  TrainingData d;
  d.train = model::gen_dataset(c.data.scene, c.data.scenes, mix_seed(c.seed, 1));
  d.validation = model::gen_dataset(c.data.scene, c.data.validation_scenes, mix_seed(c.seed, 2));
  const auto catalog = data::DatasetCatalog::uniform(static_cast<std::uint32_t>(c.data.scenes),
                                                     static_cast<std::uint64_t>(c.data.scene.pixels()) *
                                                         static_cast<std::uint64_t>(c.data.scene.channels * 4 + 1));
  const auto per_node = c.data.per_node_samples ? c.data.per_node_samples : c.data.scenes;
  d.staged = data::assign_samples(catalog, c.topology.num_nodes(), per_node, mix_seed(c.seed, 3));
  return d;
}

/// Per-node sample order: the staged list is reshuffled every epoch and
/// consumed G * B samples per step, so steps per epoch depend only on the
/// staged size and never on the node count.
class SampleOrder {
 public:
  SampleOrder(std::vector<std::uint64_t> staged, int local_ranks, std::int64_t local_batch, std::uint64_t seed)
      : staged_(std::move(staged)), per_step_(static_cast<std::size_t>(local_ranks * local_batch)), seed_(seed) {
    if (staged_.size() < per_step_)
      throw ConfigError("node stages " + std::to_string(staged_.size()) + " samples but one step needs " +
                        std::to_string(per_step_));
  }

  std::int64_t steps_per_epoch() const { return static_cast<std::int64_t>(staged_.size() / per_step_); }

  /// Samples for local slot `slot` at `step`.
  std::vector<std::uint64_t> samples(std::int64_t step, int slot, std::int64_t local_batch) {
    const auto epoch = step / steps_per_epoch();
    if (epoch != epoch_) {
      perm_ = staged_;
      Rng rng(mix_seed(seed_, static_cast<std::uint64_t>(epoch)));
      shuffle(perm_, rng);
      epoch_ = epoch;
    }
    const auto base = static_cast<std::size_t>(step % steps_per_epoch()) * per_step_ +
                      static_cast<std::size_t>(slot * local_batch);
    return {perm_.begin() + static_cast<std::ptrdiff_t>(base),
            perm_.begin() + static_cast<std::ptrdiff_t>(base + static_cast<std::size_t>(local_batch))};
  }

 private:
  std::vector<std::uint64_t> staged_;
  std::size_t per_step_;
  std::uint64_t seed_;
  std::int64_t epoch_ = -1;
  std::vector<std::uint64_t> perm_;
};

struct EvalRecord {
  std::int64_t step = 0;
  std::array<double, 3> iou{};
  double accuracy = 0.0;
};

inline EvalRecord evaluate(const model::MiniDenseNet& net, std::span<const std::vector<float>> values,
                           std::span<const model::SyntheticScene> scenes, std::int64_t step, std::size_t batch = 8) {
  model::IoUAccumulator acc(net.config().classes);
  for (std::size_t b = 0; b < scenes.size(); b += batch) {
    std::vector<std::uint64_t> idx;
    for (std::size_t i = b; i < std::min(scenes.size(), b + batch); ++i) idx.push_back(i);
    auto [x, y] = model::make_batch(scenes, idx);
    auto logits = net.predict<float>(values, std::move(x));
    acc.add(model::argmax_labels(logits), y);
  }
  EvalRecord r{step, {}, acc.accuracy()};
  for (int c = 0; c < 3 && c < acc.classes(); ++c) r.iou[static_cast<std::size_t>(c)] = acc.iou(c);
  return r;
}

inline std::vector<double> class_weights(const RunConfig& c) {
  if (c.weighting == Weighting::uniform) return std::vector<double>(3, 1.0);
  return model::inverse_sqrt_weights(c.data.scene.frequencies);
}

inline std::uint64_t parameter_hash(std::span<const optim::LayerParam<float>> params) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& p : params) h = fnv1a_values<float>(p.weights, h);
  return h;
}

/// Outcome of one rank's training loop.
struct RankOutcome {
  int rank = 0;
  std::vector<double> step_seconds;
  std::vector<double> losses;  // global loss of each step's batch
  std::vector<std::pair<std::int64_t, std::uint64_t>> hashes;  // verified (step, hash)
  std::vector<EvalRecord> evals;                                // rank 0 only
  std::vector<optim::LayerParam<float>> params;
  std::vector<std::vector<float>> trajectory;  // flattened weights after each step
  control::MessageStats control_stats;
};

/// Steps after which all ranks verify identical parameters (1-based).
inline std::vector<std::int64_t> sync_check_steps(std::int64_t steps) {
  std::vector<std::int64_t> s;
  for (auto v : {std::int64_t{1}, std::int64_t{10}, steps})
    if (v <= steps && (s.empty() || s.back() != v)) s.push_back(v);
  return s;
}

/// Synchronous data-parallel training on one rank. Each rank reduces
/// unnormalised loss gradients together with the loss statistics; dividing the
/// mean gradient by the mean weight sum gives exactly the gradient of the
/// globally normalised loss.
inline RankOutcome train_rank(const RunConfig& cfg, const TrainingData& data, transport::Endpoint& ep) {
  using Clock = std::chrono::steady_clock;
  const auto& topo = cfg.topology;
  const int rank = ep.rank();
  const auto loc = topo.locate(rank);
  const model::MiniDenseNet net(cfg.net);
  const auto weights = class_weights(cfg);

  RankOutcome out;
  out.rank = rank;
  {
    auto init = net.init(mix_seed(cfg.seed, 4));
    for (std::size_t i = 0; i < init.size(); ++i) out.params.emplace_back(net.params()[i].name, std::move(init[i]));
  }
  SampleOrder order(data.staged.at(static_cast<std::size_t>(loc.node)), topo.local_ranks(), cfg.local_batch,
                    mix_seed(cfg.seed, 5 + static_cast<std::uint64_t>(loc.node)));
  RankEngine engine(ep, topo);
  std::uint32_t next_epoch = 0;
  const auto checks = sync_check_steps(cfg.steps);

  auto values = [&] {
    std::vector<std::vector<float>> v;
    for (const auto& p : out.params) v.push_back(p.weights);
    return v;
  };

  // loss.stats holds [sum w*ce, n_0 .. n_{K-1}] with per-class pixel counts;
  // the counts stay exact integers in float, so the normaliser does not
  // depend on how the global batch is split across ranks.
  const auto world = static_cast<double>(topo.world_size());
  auto unpack = [&](std::span<const float> stats) {
    double weight_sum = 0.0;
    for (std::size_t c = 0; c < weights.size(); ++c)
      weight_sum += weights[c] * std::round(static_cast<double>(stats[1 + c]) * world);
    const double mean_weight = weight_sum / world;
    return std::pair{static_cast<double>(stats[0]) / mean_weight, mean_weight};
  };

  auto apply = [&](std::vector<NamedTensor> reduced) {
    if (reduced.back().name() != kLossStatsName) throw ProtocolError("reduced set lost its loss statistics");
    const auto [loss, denom] = unpack(reduced.back().values());
    out.losses.push_back(loss);
    for (std::size_t i = 0; i < out.params.size(); ++i) {
      auto g = std::move(reduced[i]).release();
      for (auto& x : g) x = static_cast<float>(static_cast<double>(x) / denom);
      optim::apply_gradient<float>(out.params[i], g, cfg.optim);
    }
  };

  auto verify_sync = [&](std::int64_t step) {
    const auto h = parameter_hash(out.params);
    std::vector<float> pieces(4);
    for (int i = 0; i < 4; ++i) pieces[static_cast<std::size_t>(i)] = static_cast<float>((h >> (16 * i)) & 0xFFFF);
    auto reduced = engine.submit(next_epoch++, {NamedTensor(kHashCheckName, {4}, pieces)}, collectives::ReduceOp::sum)
                       .get();
    const auto sums = reduced.front().values();
    for (std::size_t i = 0; i < 4; ++i)
      if (sums[i] != pieces[i] * static_cast<float>(topo.world_size()))
        throw VerificationError("parameter hash mismatch across ranks after step " + std::to_string(step) +
                                " (rank " + std::to_string(rank) + ")");
    out.hashes.emplace_back(step, h);
  };

  std::optional<std::future<std::vector<NamedTensor>>> in_flight;
  const auto spe = order.steps_per_epoch();
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    const auto t0 = Clock::now();
    const auto idx = order.samples(step, loc.slot, cfg.local_batch);
    auto [x, y] = model::make_batch(data.train, idx);
    const auto vals = values();
    auto r = model::loss_and_gradients<float>(net, vals, std::move(x), y, weights, 1.0);
    auto tensors = model::named_gradients(net, std::move(r.grads));
    std::vector<float> stats(1 + weights.size(), 0.0f);
    stats[0] = static_cast<float>(r.loss.weighted_sum);
    for (auto label : y) stats[1 + label] += 1.0f;
    tensors.emplace_back(kLossStatsName, Shape{static_cast<std::int64_t>(stats.size())}, std::move(stats));
    auto fut = engine.submit(next_epoch++, std::move(tensors));
    if (cfg.optim.lag == 0) {
      apply(fut.get());
    } else {
      if (in_flight) apply(in_flight->get());
      in_flight = std::move(fut);
    }
    out.step_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    if (cfg.record_trajectory && rank == 0) {
      auto& snap = out.trajectory.emplace_back();
      for (const auto& p : out.params) snap.insert(snap.end(), p.weights.begin(), p.weights.end());
    }

    if (std::find(checks.begin(), checks.end(), step + 1) != checks.end()) verify_sync(step + 1);
    const bool epoch_end = (step + 1) % spe == 0;
    if (rank == 0 && cfg.validate_each_epoch && epoch_end && step + 1 < cfg.steps && !data.validation.empty())
      out.evals.push_back(evaluate(net, values(), data.validation, step + 1));
  }
  if (in_flight) {
    // The last lagged gradient has no step left to be applied in; only its
    // statistics are kept.
    auto last = in_flight->get();
    out.losses.push_back(unpack(last.back().values()).first);
  }
  if (rank == 0 && !data.validation.empty()) out.evals.push_back(evaluate(net, values(), data.validation, cfg.steps));
  out.control_stats = engine.stats();
  engine.stop();
  return out;
}

/// Aggregated view of a multi-rank run.
struct TrainReport {
  std::vector<StepRecord> records;
  SustainedStats throughput;  // per-rank samples/s
  std::vector<EvalRecord> evals;
  std::vector<std::pair<std::int64_t, std::uint64_t>> hashes;
  std::vector<optim::LayerParam<float>> params;  // rank 0's final parameters
  std::vector<std::vector<float>> trajectory;    // rank 0's, when recorded
  int max_control_sent = 0;
  int max_control_received = 0;
  double elapsed_s = 0.0;
};

inline TrainReport merge_outcomes(const RunConfig& cfg, std::vector<RankOutcome> ranks, double elapsed) {
  if (ranks.empty()) throw ConfigError("no rank outcomes");
  std::sort(ranks.begin(), ranks.end(), [](const auto& a, const auto& b) { return a.rank < b.rank; });
  TrainReport rep;
  rep.elapsed_s = elapsed;
  for (const auto& r : ranks) {
    if (r.hashes != ranks.front().hashes)
      throw VerificationError("rank " + std::to_string(r.rank) + " finished with different parameter hashes");
    rep.max_control_sent = std::max(rep.max_control_sent, r.control_stats.max_sent_per_tensor);
    rep.max_control_received = std::max(rep.max_control_received, r.control_stats.max_received_per_tensor);
  }
  for (std::int64_t s = 0; s < cfg.steps; ++s) {
    StepRecord rec;
    rec.step = s;
    for (const auto& r : ranks) {
      const double dt = r.step_seconds.at(static_cast<std::size_t>(s));
      rec.samples_per_s.push_back(static_cast<double>(cfg.local_batch) / dt);
      rec.wall_s = std::max(rec.wall_s, dt);
    }
    rec.loss = ranks.front().losses.at(static_cast<std::size_t>(s));
    rep.records.push_back(std::move(rec));
  }
  // The first step pays one-off allocation and connection costs.
  std::span<const StepRecord> steady(rep.records);
  if (steady.size() > 1) steady = steady.subspan(1);
  rep.throughput = sustained_stats(steady);
  rep.evals = ranks.front().evals;
  rep.hashes = ranks.front().hashes;
  rep.params = std::move(ranks.front().params);
  rep.trajectory = std::move(ranks.front().trajectory);
  return rep;
}

/// Runs every rank on its own thread over the given endpoints.
inline TrainReport run_threads(const RunConfig& cfg, const TrainingData& data,
                               std::vector<transport::Endpoint*> endpoints) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mutex mu;
  std::exception_ptr root_cause;
  std::vector<std::future<RankOutcome>> futs;
  for (auto* ep : endpoints)
    futs.push_back(std::async(std::launch::async, [&, ep] {
      try {
        return train_rank(cfg, data, *ep);
      } catch (...) {
        {
          std::lock_guard lk(mu);
          if (!root_cause) root_cause = std::current_exception();
        }
        // Unblock peers waiting on this rank.
        for (auto* other : endpoints) other->shutdown();
        throw;
      }
    }));
  std::vector<RankOutcome> outs;
  for (auto& f : futs) {
    try {
      outs.push_back(f.get());
    } catch (...) {
    }
  }
  if (root_cause) std::rethrow_exception(root_cause);
  return merge_outcomes(cfg, std::move(outs), std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

inline TrainReport run_in_process(const RunConfig& cfg, const TrainingData& data) {
  transport::InProcessFabric fabric(cfg.topology.world_size(), cfg.backend.link());
  std::vector<std::unique_ptr<transport::InProcessEndpoint>> eps;
  std::vector<transport::Endpoint*> raw;
  for (int r = 0; r < cfg.topology.world_size(); ++r) {
    eps.push_back(fabric.endpoint(r));
    raw.push_back(eps.back().get());
  }
  return run_threads(cfg, data, raw);
}

/// Every rank in this process, talking over loopback TCP sockets.
inline TrainReport run_tcp_threads(const RunConfig& cfg, const TrainingData& data) {
  auto eps = transport::make_loopback_group(cfg.topology.world_size(), cfg.backend.link());
  std::vector<transport::Endpoint*> raw;
  for (auto& e : eps) raw.push_back(e.get());
  return run_threads(cfg, data, raw);
}

namespace detail {

inline json outcome_to_json(const RankOutcome& o) {
  json j;
  j["rank"] = o.rank;
  j["step_seconds"] = o.step_seconds;
  j["losses"] = o.losses;
  j["hashes"] = o.hashes;
  j["max_sent"] = o.control_stats.max_sent_per_tensor;
  j["max_received"] = o.control_stats.max_received_per_tensor;
  j["evals"] = json::array();
  for (const auto& e : o.evals) j["evals"].push_back({{"step", e.step}, {"iou", e.iou}, {"accuracy", e.accuracy}});
  return j;
}

inline RankOutcome outcome_from_json(const json& j) {
  RankOutcome o;
  o.rank = j.at("rank").get<int>();
  o.step_seconds = j.at("step_seconds").get<std::vector<double>>();
  o.losses = j.at("losses").get<std::vector<double>>();
  o.hashes = j.at("hashes").get<std::vector<std::pair<std::int64_t, std::uint64_t>>>();
  o.control_stats.max_sent_per_tensor = j.at("max_sent").get<int>();
  o.control_stats.max_received_per_tensor = j.at("max_received").get<int>();
  for (const auto& e : j.at("evals"))
    o.evals.push_back({e.at("step").get<std::int64_t>(), e.at("iou").get<std::array<double, 3>>(),
                       e.at("accuracy").get<double>()});
  return o;
}

/// Child body: listen, publish the port, wait for every peer, train.
inline int tcp_child(const RunConfig& cfg, const TrainingData& data, int rank, const std::filesystem::path& dir) {
  try {
    const int world = cfg.topology.world_size();
    const auto port = static_cast<std::uint16_t>(cfg.backend.base_port ? cfg.backend.base_port + rank : 0);
    transport::TcpEndpoint ep(rank, world, {cfg.backend.host, port}, cfg.backend.link());
    {
      const auto tmp = dir / ("port." + std::to_string(rank) + ".tmp");
      std::ofstream(tmp) << ep.port();
      std::filesystem::rename(tmp, dir / ("port." + std::to_string(rank)));
    }
    std::vector<transport::TcpAddress> peers(static_cast<std::size_t>(world));
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(60);
    for (int r = 0; r < world; ++r) {
      const auto f = dir / ("port." + std::to_string(r));
      while (!std::filesystem::exists(f)) {
        if (std::chrono::steady_clock::now() > deadline) throw TransportError("rendezvous timed out waiting for rank " + std::to_string(r));
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
      int p = 0;
      std::ifstream(f) >> p;
      peers[static_cast<std::size_t>(r)] = {cfg.backend.host, static_cast<std::uint16_t>(p)};
    }
    ep.set_peers(peers);
    auto o = train_rank(cfg, data, ep);
    std::ofstream(dir / ("rank." + std::to_string(rank) + ".json")) << outcome_to_json(o).dump();
    if (rank == 0) {
      std::vector<NamedTensor> ck;
      const model::MiniDenseNet net(cfg.net);
      for (std::size_t i = 0; i < o.params.size(); ++i)
        ck.emplace_back(o.params[i].name, net.params()[i].shape, o.params[i].weights);
      model::write_checkpoint(dir / "rank0.ckpt", ck);
    }
    ep.shutdown();
    return 0;
  } catch (const std::exception& e) {
    std::ofstream(dir / ("rank." + std::to_string(rank) + ".error")) << e.what();
    return 1;
  }
}

}  // namespace detail

/// One OS process per rank, connected over TCP. The parent only forks,
/// waits and merges the per-rank results written to `work_dir`.
inline TrainReport run_tcp_processes(const RunConfig& cfg, const TrainingData& data,
                                     const std::filesystem::path& work_dir) {
  std::filesystem::create_directories(work_dir);
  for (const auto& e : std::filesystem::directory_iterator(work_dir))
    if (e.path().filename().string().rfind("port.", 0) == 0 || e.path().filename().string().rfind("rank.", 0) == 0)
      std::filesystem::remove(e.path());
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<pid_t> kids;
  for (int r = 0; r < cfg.topology.world_size(); ++r) {
    const pid_t pid = ::fork();
    if (pid < 0) throw TransportError("fork failed");
    if (pid == 0) ::_exit(detail::tcp_child(cfg, data, r, work_dir));
    kids.push_back(pid);
  }
  std::string failures;
  for (std::size_t r = 0; r < kids.size(); ++r) {
    int status = 0;
    ::waitpid(kids[r], &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      std::string why = "abnormal exit";
      if (std::ifstream in(work_dir / ("rank." + std::to_string(r) + ".error")); in)
        why.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
      failures += "rank " + std::to_string(r) + ": " + why + "; ";
    }
  }
  if (!failures.empty()) throw Error("tcp training failed: " + failures);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::vector<RankOutcome> outs;
  for (int r = 0; r < cfg.topology.world_size(); ++r)
    outs.push_back(detail::outcome_from_json(load_json(work_dir / ("rank." + std::to_string(r) + ".json"))));
  auto rep = merge_outcomes(cfg, std::move(outs), elapsed);
  const auto ck = model::read_checkpoint(work_dir / "rank0.ckpt");
  rep.params.clear();
  for (const auto& t : ck) rep.params.emplace_back(t.name(), t.vector());
  return rep;
}

inline TrainReport train_run(const RunConfig& cfg, const TrainingData& data) {
  if (cfg.backend.kind == Backend::tcp) return run_tcp_processes(cfg, data, cfg.output_dir / "ranks");
  return run_in_process(cfg, data);
}

inline json report_to_json(const RunConfig& cfg, const TrainReport& r) {
  json j;
  j["world_size"] = cfg.topology.world_size();
  j["global_batch"] = cfg.global_batch();
  j["steps"] = cfg.steps;
  j["lag"] = cfg.optim.lag;
  j["elapsed_s"] = r.elapsed_s;
  j["samples_per_s_per_rank"] = {{"median", r.throughput.median}, {"p16", r.throughput.ci_low}, {"p84", r.throughput.ci_high}};
  j["samples_per_s_total"] = r.throughput.median * cfg.topology.world_size();
  j["final_loss"] = r.records.empty() ? 0.0 : r.records.back().loss;
  j["hash_checks"] = r.hashes;
  j["max_control_sent_per_tensor"] = r.max_control_sent;
  j["max_control_received_per_tensor"] = r.max_control_received;
  j["evals"] = json::array();
  for (const auto& e : r.evals)
    j["evals"].push_back({{"step", e.step}, {"iou_bg", e.iou[0]}, {"iou_ar", e.iou[1]}, {"iou_tc", e.iou[2]}, {"accuracy", e.accuracy}});
  return j;
}

/// loss.csv, steps.csv, summary.json and the final checkpoint.
inline void write_run_artifacts(const RunConfig& cfg, const TrainReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "loss.csv");
    f << "step,loss\n";
    for (const auto& rec : r.records) f << rec.step << ',' << rec.loss << '\n';
  }
  {
    std::ofstream f(dir / "steps.csv");
    f << "step,wall_s";
    for (int k = 0; k < cfg.topology.world_size(); ++k) f << ",rank" << k << "_samples_per_s";
    f << '\n';
    for (const auto& rec : r.records) {
      f << rec.step << ',' << rec.wall_s;
      for (double v : rec.samples_per_s) f << ',' << v;
      f << '\n';
    }
  }
  std::ofstream(dir / "summary.json") << report_to_json(cfg, r).dump(2) << '\n';
  if (cfg.write_checkpoint) {
    const model::MiniDenseNet net(cfg.net);
    std::vector<NamedTensor> ck;
    for (std::size_t i = 0; i < r.params.size(); ++i)
      ck.emplace_back(r.params[i].name, net.params()[i].shape, r.params[i].weights);
    model::write_checkpoint(dir / "checkpoint.bin", ck);
  }
}

}  // namespace dlscale::harness
