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
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "dlscale/core/error.hpp"
#include "dlscale/core/op_graph.hpp"

namespace dlscale::flops {

/// FLOPs charged per logit by softmax cross-entropy: subtract max, exp,
/// normalise, log, weight.
inline constexpr std::int64_t kSoftmaxCeFlopsPerLogit = 5;

struct NodeFlops {
  std::string name;
  OpKind kind;
  Shape output;
  std::int64_t flops = 0;
};

struct FlopReport {
  std::vector<NodeFlops> nodes;
  std::int64_t total = 0;
  std::int64_t batch = 1;
  bool training = false;  // forward plus backward
  bool optimizer_excluded = true;
  std::map<std::string, std::int64_t> by_kind;

  double per_sample() const { return static_cast<double>(total) / static_cast<double>(batch); }
};

/// Forward FLOPs of one node given its input and output shapes.
inline std::int64_t node_flops(const OpNode& n, const std::vector<Shape>& ins, const Shape& out) {
  const Shape& x = ins.front();
  switch (n.kind) {
    case OpKind::conv2d: {
      const auto& a = std::get<ConvAttrs>(n.attrs);
      return 2 * a.kernel_h * a.kernel_w * out[2] * out[3] * a.in_channels * a.out_channels * out[0];
    }
    case OpKind::matmul: {
      const auto& a = std::get<MatmulAttrs>(n.attrs);
      return 2 * (element_count(x) / a.in_features) * a.in_features * a.out_features;
    }
    case OpKind::bias_add:
    case OpKind::relu:
    case OpKind::elementwise:
      return element_count(out);
    case OpKind::avgpool:
      return element_count(x);
    case OpKind::softmax_ce:
      return kSoftmaxCeFlopsPerLogit * element_count(x);
    case OpKind::concat:
    case OpKind::upsample:
      return 0;
  }
  return 0;
}

/// Backward FLOPs: GEMM-like ops cost twice the forward (input and weight
/// gradients); every other op costs the same as its forward.
inline std::int64_t backward_flops(const OpNode& n, std::int64_t forward) {
  return n.kind == OpKind::conv2d || n.kind == OpKind::matmul ? 2 * forward : forward;
}

/// Traverses the graph in node order. `batch` divides the total for the
/// per-sample figure; 0 takes it from the leading extent of the first input.
inline FlopReport count_graph(const OpGraph& g, const std::map<std::string, Shape>& input_shapes,
                              std::int64_t batch = 0, bool training = false) {
  const auto shapes = infer_shapes(g, input_shapes);
  FlopReport r;
  r.training = training;
  if (batch == 0) {
    if (g.inputs().empty()) throw ShapeError("graph has no inputs to take the batch size from");
    batch = input_shapes.at(g.inputs().front()).front();
  }
  if (batch <= 0) throw ShapeError("batch size must be positive");
  r.batch = batch;
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    const auto& n = g.nodes()[i];
    std::vector<Shape> ins;
    for (const auto& in : n.inputs) {
      auto idx = g.find(in);
      ins.push_back(idx ? shapes[*idx] : input_shapes.at(in));
    }
    std::int64_t f = node_flops(n, ins, shapes[i]);
    if (training) f += backward_flops(n, f);
    r.nodes.push_back({n.name, n.kind, shapes[i], f});
    r.total += f;
    r.by_kind[std::string(to_string(n.kind))] += f;
  }
  return r;
}

/// Sustained rate from a per-sample cost and a throughput.
inline double flops_to_rate(double flops_per_sample, double samples_per_second) {
  if (samples_per_second < 0.0 || flops_per_sample < 0.0) throw ConfigError("rates and costs must be non-negative");
  return flops_per_sample * samples_per_second;
}

inline double flops_to_rate(const FlopReport& r, double samples_per_second) {
  return flops_to_rate(r.per_sample(), samples_per_second);
}

inline nlohmann::json to_json(const FlopReport& r) {
  nlohmann::json j;
  j["total_flops"] = r.total;
  j["batch"] = r.batch;
  j["flops_per_sample"] = r.per_sample();
  j["training"] = r.training;
  j["optimizer_flops_excluded"] = r.optimizer_excluded;
  j["by_kind"] = r.by_kind;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : r.nodes)
    j["nodes"].push_back({{"name", n.name}, {"kind", std::string(to_string(n.kind))}, {"output", n.output}, {"flops", n.flops}});
  return j;
}

}  // namespace dlscale::flops
