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

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "dlscale/core/error.hpp"
#include "dlscale/core/topology.hpp"
#include "dlscale/model/dataset.hpp"
#include "dlscale/model/net.hpp"
#include "dlscale/optimizer/optimizer.hpp"
#include "dlscale/transport/endpoint.hpp"

namespace dlscale::harness {

using nlohmann::json;

/// Typed access to one JSON object that rejects keys nobody asked for.
class Fields {
 public:
  Fields(json j, std::string where) : j_(std::move(j)), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(key);
  }

  template <class T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(where_ + ": missing required key '" + key + "'");
    return convert<T>(key);
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  /// Nested object, or an empty one when absent.
  json section(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? j_.at(key) : json::object();
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
  }

 private:
  template <class T>
  T convert(const std::string& key) {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  json j_;
  std::string where_;
  std::set<std::string> seen_;
};

enum class Backend { in_process, tcp };
enum class Weighting { inverse_sqrt, uniform };

struct BackendConfig {
  Backend kind = Backend::in_process;
  double latency_ms = 0.0;
  double bandwidth_gbps = 0.0;  // 0 = unlimited
  std::string host = "127.0.0.1";
  int base_port = 0;            // 0 = ephemeral ports (rank processes share a rendezvous file)

  transport::LinkModel link() const {
    transport::LinkModel l;
    l.latency = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double, std::milli>(latency_ms));
    l.bytes_per_second = bandwidth_gbps * 1e9;
    return l;
  }
};

struct DataConfig {
  model::SceneConfig scene;
  std::size_t scenes = 256;
  std::size_t validation_scenes = 64;
  std::size_t per_node_samples = 0;  // 0 = every node stages the full set
};

struct RunConfig {
  RankTopology topology{1, 1, 1, 4};
  BackendConfig backend;
  DataConfig data;
  model::NetConfig net;
  optim::OptimConfig optim;
  Weighting weighting = Weighting::inverse_sqrt;
  std::int64_t steps = 20;
  std::int64_t local_batch = 2;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "run";
  bool validate_each_epoch = false;
  bool write_checkpoint = true;
  std::int64_t log_every = 10;
  bool record_trajectory = false;  // rank 0 keeps flattened weights after every step

  std::int64_t global_batch() const { return local_batch * topology.world_size(); }
};

inline RankTopology parse_topology(const json& j) {
  Fields f(j, "topology");
  RankTopology t(f.get<int>("nodes", 1), f.get<int>("local_ranks", 1), f.get<int>("lanes", 1), f.get<int>("radix", 4));
  f.finish();
  return t;
}

inline BackendConfig parse_backend(const json& j) {
  Fields f(j, "backend");
  BackendConfig b;
  const auto kind = f.get<std::string>("kind", "in_process");
  if (kind == "in_process")
    b.kind = Backend::in_process;
  else if (kind == "tcp")
    b.kind = Backend::tcp;
  else
    throw ConfigError("backend.kind must be 'in_process' or 'tcp'");
  b.latency_ms = f.get<double>("latency_ms", 0.0);
  b.bandwidth_gbps = f.get<double>("bandwidth_gbps", 0.0);
  b.host = f.get<std::string>("host", b.host);
  b.base_port = f.get<int>("base_port", 0);
  f.finish();
  if (b.latency_ms < 0.0 || b.bandwidth_gbps < 0.0) throw ConfigError("backend latency and bandwidth must be >= 0");
  return b;
}

inline DataConfig parse_data(const json& j) {
  Fields f(j, "dataset");
  DataConfig d;
  auto& s = d.scene;
  s.channels = f.get<int>("channels", s.channels);
  s.height = f.get<int>("height", s.height);
  s.width = f.get<int>("width", s.width);
  s.frequencies = f.get<std::array<double, 3>>("frequencies", s.frequencies);
  s.noise_std = f.get<double>("noise_std", s.noise_std);
  s.river_amplitude = f.get<double>("river_amplitude", s.river_amplitude);
  s.cyclone_amplitude = f.get<double>("cyclone_amplitude", s.cyclone_amplitude);
  s.cyclone_radius = f.get<int>("cyclone_radius", s.cyclone_radius);
  s.river_width = f.get<int>("river_width", s.river_width);
  s.river_min_length = f.get<int>("river_min_length", s.river_min_length);
  s.river_max_length = f.get<int>("river_max_length", s.river_max_length);
  s.river_channels = f.get<int>("river_channels", s.river_channels);
  s.cyclone_channels = f.get<int>("cyclone_channels", s.cyclone_channels);
  d.scenes = f.get<std::size_t>("scenes", d.scenes);
  d.validation_scenes = f.get<std::size_t>("validation_scenes", d.validation_scenes);
  d.per_node_samples = f.get<std::size_t>("per_node_samples", d.per_node_samples);
  f.finish();
  s.validate();
  if (d.scenes == 0) throw ConfigError("dataset.scenes must be positive");
  return d;
}

inline model::NetConfig parse_net(const json& j) {
  Fields f(j, "model");
  model::NetConfig n;
  n.stem_channels = f.get<int>("stem_channels", n.stem_channels);
  n.growth = f.get<int>("growth", n.growth);
  n.levels = f.get<int>("levels", n.levels);
  n.layers_per_block = f.get<int>("layers_per_block", n.layers_per_block);
  n.zero_init_head = f.get<bool>("zero_init_head", n.zero_init_head);
  f.finish();
  return n;
}

inline optim::OptimConfig parse_optim(const json& j) {
  Fields f(j, "optimizer");
  optim::OptimConfig o;
  o.lr = f.get<double>("lr", o.lr);
  o.momentum = f.get<double>("momentum", o.momentum);
  o.trust = f.get<double>("trust", o.trust);
  o.weight_decay = f.get<double>("weight_decay", o.weight_decay);
  o.epsilon = f.get<double>("epsilon", o.epsilon);
  o.larc = f.get<bool>("larc", o.larc);
  o.lag = f.get<int>("lag", o.lag);
  f.finish();
  o.validate();
  return o;
}

/// Training settings from the top level of a config document. Sections for
/// other subcommands are ignored here.
inline RunConfig parse_run(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  auto get = [&](const char* key) { return doc.contains(key) ? doc.at(key) : json::object(); };
  c.topology = parse_topology(get("topology"));
  c.backend = parse_backend(get("backend"));
  c.data = parse_data(get("dataset"));
  c.net = parse_net(get("model"));
  c.net.in_channels = c.data.scene.channels;
  c.net.validate();
  c.optim = parse_optim(get("optimizer"));

  Fields f(get("train"), "train");
  const auto w = f.get<std::string>("loss_weighting", "inverse_sqrt");
  if (w == "inverse_sqrt")
    c.weighting = Weighting::inverse_sqrt;
  else if (w == "uniform")
    c.weighting = Weighting::uniform;
  else
    throw ConfigError("train.loss_weighting must be 'inverse_sqrt' or 'uniform'");
  c.steps = f.get<std::int64_t>("steps", c.steps);
  c.local_batch = f.get<std::int64_t>("local_batch", c.local_batch);
  c.validate_each_epoch = f.get<bool>("validate_each_epoch", c.validate_each_epoch);
  c.write_checkpoint = f.get<bool>("checkpoint", c.write_checkpoint);
  c.log_every = f.get<std::int64_t>("log_every", c.log_every);
  c.record_trajectory = f.get<bool>("record_trajectory", c.record_trajectory);
  f.finish();
  c.seed = doc.value("seed", c.seed);
  c.output_dir = doc.value("output_dir", c.output_dir.string());
  if (c.steps <= 0 || c.local_batch <= 0) throw ConfigError("train.steps and train.local_batch must be positive");
  const auto df = c.net.downsample_factor();
  if (c.data.scene.height % df != 0 || c.data.scene.width % df != 0)
    throw ConfigError("scene extent must be divisible by the network downsample factor " + std::to_string(df));
  return c;
}

inline json load_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

}  // namespace dlscale::harness
