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

#include <map>
#include <nlohmann/json.hpp>
#include <string>

#include "dlscale/core/error.hpp"
#include "dlscale/core/op_graph.hpp"

namespace dlscale {

/// Graph documents look like
///   {"inputs": {"x": [2, 48, 768, 1152]},
///    "nodes": [{"name": "c", "kind": "conv2d", "inputs": ["x"],
///               "attrs": {"kernel_h": 3, "kernel_w": 3, "in_channels": 48,
///                         "out_channels": 32, "padding": "same"}}]}
struct GraphDocument {
  OpGraph graph;
  std::map<std::string, Shape> input_shapes;
};

namespace detail {

inline std::int64_t required_int(const nlohmann::json& attrs, const std::string& node, const char* key) {
  if (!attrs.contains(key)) throw ConfigError(node + ": missing attribute '" + key + "'");
  if (!attrs.at(key).is_number_integer()) throw ConfigError(node + ": attribute '" + key + "' must be an integer");
  return attrs.at(key).get<std::int64_t>();
}

inline std::int64_t optional_int(const nlohmann::json& attrs, const std::string& node, const char* key,
                                 std::int64_t fallback) {
  return attrs.contains(key) ? required_int(attrs, node, key) : fallback;
}

inline OpAttrs parse_attrs(OpKind kind, const nlohmann::json& a, const std::string& n) {
  switch (kind) {
    case OpKind::conv2d: {
      ConvAttrs c;
      c.kernel_h = required_int(a, n, "kernel_h");
      c.kernel_w = required_int(a, n, "kernel_w");
      c.in_channels = required_int(a, n, "in_channels");
      c.out_channels = required_int(a, n, "out_channels");
      c.stride = optional_int(a, n, "stride", 1);
      c.dilation = optional_int(a, n, "dilation", 1);
      const auto pad = a.value("padding", std::string("same"));
      if (pad == "same")
        c.padding = Padding::same;
      else if (pad == "valid")
        c.padding = Padding::valid;
      else
        throw ConfigError(n + ": unknown padding '" + pad + "'");
      return c;
    }
    case OpKind::matmul:
      return MatmulAttrs{required_int(a, n, "in_features"), required_int(a, n, "out_features")};
    case OpKind::bias_add:
      return BiasAttrs{required_int(a, n, "channels")};
    case OpKind::concat:
      return ConcatAttrs{optional_int(a, n, "axis", 1)};
    case OpKind::avgpool:
    case OpKind::upsample:
      return ScaleAttrs{optional_int(a, n, "factor", 2)};
    case OpKind::relu:
    case OpKind::softmax_ce:
    case OpKind::elementwise:
      return NoAttrs{};
  }
  throw ConfigError(n + ": unhandled op kind");
}

}  // namespace detail

inline GraphDocument graph_from_json(const nlohmann::json& doc) {
  GraphDocument out;
  if (!doc.contains("inputs") || !doc.at("inputs").is_object()) throw ConfigError("graph needs an 'inputs' object");
  if (!doc.contains("nodes") || !doc.at("nodes").is_array()) throw ConfigError("graph needs a 'nodes' array");
  for (const auto& [name, shape] : doc.at("inputs").items()) {
    out.graph.add_input(name);
    out.input_shapes[name] = shape.get<Shape>();
  }
  for (const auto& jn : doc.at("nodes")) {
    OpNode n;
    n.name = jn.at("name").get<std::string>();
    const auto kind_name = jn.at("kind").get<std::string>();
    const auto kind = parse_op_kind(kind_name);
    if (!kind) throw ConfigError(n.name + ": unknown op kind '" + kind_name + "'");
    n.kind = *kind;
    n.inputs = jn.at("inputs").get<std::vector<std::string>>();
    n.attrs = detail::parse_attrs(n.kind, jn.value("attrs", nlohmann::json::object()), n.name);
    out.graph.add(std::move(n));
  }
  return out;
}

inline nlohmann::json graph_to_json(const OpGraph& g, const std::map<std::string, Shape>& input_shapes) {
  nlohmann::json doc;
  doc["inputs"] = nlohmann::json::object();
  for (const auto& in : g.inputs()) doc["inputs"][in] = input_shapes.at(in);
  doc["nodes"] = nlohmann::json::array();
  for (const auto& n : g.nodes()) {
    nlohmann::json jn{{"name", n.name}, {"kind", std::string(to_string(n.kind))}, {"inputs", n.inputs}};
    nlohmann::json a = nlohmann::json::object();
    std::visit(
        [&](const auto& v) {
          using V = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<V, ConvAttrs>) {
            a = {{"kernel_h", v.kernel_h}, {"kernel_w", v.kernel_w}, {"in_channels", v.in_channels},
                 {"out_channels", v.out_channels}, {"stride", v.stride}, {"dilation", v.dilation},
                 {"padding", v.padding == Padding::same ? "same" : "valid"}};
          } else if constexpr (std::is_same_v<V, MatmulAttrs>) {
            a = {{"in_features", v.in_features}, {"out_features", v.out_features}};
          } else if constexpr (std::is_same_v<V, BiasAttrs>) {
            a = {{"channels", v.channels}};
          } else if constexpr (std::is_same_v<V, ConcatAttrs>) {
            a = {{"axis", v.axis}};
          } else if constexpr (std::is_same_v<V, ScaleAttrs>) {
            a = {{"factor", v.factor}};
          }
        },
        n.attrs);
    jn["attrs"] = a;
    doc["nodes"].push_back(std::move(jn));
  }
  return doc;
}

}  // namespace dlscale
