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
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "dlscale/core/error.hpp"
#include "dlscale/core/tensor.hpp"

namespace dlscale {

enum class OpKind { conv2d, matmul, bias_add, relu, concat, softmax_ce, avgpool, upsample, elementwise };

inline constexpr std::string_view kOpKindNames[] = {
    "conv2d", "matmul", "bias_add", "relu", "concat", "softmax_ce", "avgpool", "upsample", "elementwise"};

inline std::string_view to_string(OpKind k) { return kOpKindNames[static_cast<int>(k)]; }

inline std::optional<OpKind> parse_op_kind(std::string_view s) {
  for (int i = 0; i < static_cast<int>(std::size(kOpKindNames)); ++i)
    if (kOpKindNames[i] == s) return static_cast<OpKind>(i);
  return std::nullopt;
}

enum class Padding { same, valid };

/// conv2d over [N, Cin, H, W]. Weights are implied by the attributes.
struct ConvAttrs {
  std::int64_t kernel_h = 0;
  std::int64_t kernel_w = 0;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t stride = 1;
  std::int64_t dilation = 1;
  Padding padding = Padding::same;
};

/// matmul of [..., in_features] by an implied [in_features, out_features] matrix.
struct MatmulAttrs {
  std::int64_t in_features = 0;
  std::int64_t out_features = 0;
};

struct BiasAttrs {
  std::int64_t channels = 0;
};

struct ConcatAttrs {
  std::int64_t axis = 1;
};

/// Window/scale factor for avgpool and nearest-neighbour upsample.
struct ScaleAttrs {
  std::int64_t factor = 2;
};

struct NoAttrs {};

using OpAttrs = std::variant<NoAttrs, ConvAttrs, MatmulAttrs, BiasAttrs, ConcatAttrs, ScaleAttrs>;

struct OpNode {
  std::string name;
  OpKind kind = OpKind::relu;
  std::vector<std::string> inputs;  // producer node names or graph input names
  OpAttrs attrs;
};

/// Output extent of a strided/dilated window along one axis.
inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                    std::int64_t dilation, Padding pad) {
  if (pad == Padding::same) return (in + stride - 1) / stride;
  const std::int64_t span = dilation * (kernel - 1) + 1;
  if (in < span) return 0;
  return (in - span) / stride + 1;
}

/// DAG of typed numeric operations. Nodes may only consume graph inputs or
/// nodes added before them, so the graph is acyclic by construction.
class OpGraph {
 public:
  void add_input(std::string name) {
    if (name.empty()) throw ShapeError("graph input name must be non-empty");
    if (index_.count(name) || std::find(inputs_.begin(), inputs_.end(), name) != inputs_.end())
      throw ShapeError("duplicate name in graph: " + name);
    inputs_.push_back(std::move(name));
  }

  const OpNode& add(OpNode node) {
    if (node.name.empty()) throw ShapeError("node name must be non-empty");
    if (index_.count(node.name) || is_input(node.name))
      throw ShapeError("duplicate name in graph: " + node.name);
    for (const auto& in : node.inputs)
      if (!index_.count(in) && !is_input(in))
        throw ShapeError(node.name + ": input '" + in + "' does not refer to an earlier node or graph input");
    validate_attrs(node);
    index_.emplace(node.name, nodes_.size());
    nodes_.push_back(std::move(node));
    return nodes_.back();
  }

  const std::vector<OpNode>& nodes() const { return nodes_; }
  const std::vector<std::string>& inputs() const { return inputs_; }

  bool is_input(const std::string& name) const {
    return std::find(inputs_.begin(), inputs_.end(), name) != inputs_.end();
  }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  static void validate_attrs(const OpNode& n) {
    auto fail = [&](const std::string& why) { throw ShapeError(n.name + " (" + std::string(to_string(n.kind)) + "): " + why); };
    auto arity = [&](std::size_t lo, std::size_t hi) {
      if (n.inputs.size() < lo || n.inputs.size() > hi) fail("wrong number of inputs");
    };
    switch (n.kind) {
      case OpKind::conv2d: {
        arity(1, 1);
        const auto* a = std::get_if<ConvAttrs>(&n.attrs);
        if (!a) fail("missing conv attributes");
        if (a->kernel_h < 1 || a->kernel_w < 1 || a->in_channels < 1 || a->out_channels < 1 || a->stride < 1 ||
            a->dilation < 1)
          fail("conv attributes must be positive");
        break;
      }
      case OpKind::matmul: {
        arity(1, 1);
        const auto* a = std::get_if<MatmulAttrs>(&n.attrs);
        if (!a) fail("missing matmul attributes");
        if (a->in_features < 1 || a->out_features < 1) fail("matmul attributes must be positive");
        break;
      }
      case OpKind::bias_add: {
        arity(1, 1);
        const auto* a = std::get_if<BiasAttrs>(&n.attrs);
        if (!a || a->channels < 1) fail("missing bias channel count");
        break;
      }
      case OpKind::concat: {
        if (n.inputs.size() < 2) fail("concat needs at least two inputs");
        if (!std::holds_alternative<ConcatAttrs>(n.attrs)) fail("missing concat axis");
        break;
      }
      case OpKind::avgpool:
      case OpKind::upsample: {
        arity(1, 1);
        const auto* a = std::get_if<ScaleAttrs>(&n.attrs);
        if (!a || a->factor < 1) fail("missing scale factor");
        break;
      }
      case OpKind::relu:
      case OpKind::softmax_ce:
        arity(1, 1);
        break;
      case OpKind::elementwise:
        if (n.inputs.empty()) fail("elementwise needs at least one input");
        break;
    }
  }

  std::vector<std::string> inputs_;
  std::vector<OpNode> nodes_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Computes the output shape of every node, indexed like graph.nodes().
/// Layout is [batch, channel, height, width] for spatial ops.
inline std::vector<Shape> infer_shapes(const OpGraph& graph, const std::map<std::string, Shape>& input_shapes) {
  std::vector<Shape> out;
  out.reserve(graph.nodes().size());

  for (const auto& in : graph.inputs()) {
    auto it = input_shapes.find(in);
    if (it == input_shapes.end()) throw ShapeError("missing shape for graph input '" + in + "'");
    require_positive(it->second, in);
  }

  auto shape_of = [&](const std::string& name) -> const Shape& {
    if (auto idx = graph.find(name)) return out[*idx];
    return input_shapes.at(name);
  };

  for (const auto& node : graph.nodes()) {
    auto fail = [&](const std::string& why) -> void { throw ShapeError(node.name + ": " + why); };
    const Shape& x = shape_of(node.inputs.front());
    Shape y;
    switch (node.kind) {
      case OpKind::conv2d: {
        const auto& a = std::get<ConvAttrs>(node.attrs);
        if (x.size() != 4) fail("conv2d expects a rank-4 input, got " + to_string(x));
        if (x[1] != a.in_channels)
          fail("conv2d expects " + std::to_string(a.in_channels) + " input channels, got " + std::to_string(x[1]));
        y = {x[0], a.out_channels, conv_out_extent(x[2], a.kernel_h, a.stride, a.dilation, a.padding),
             conv_out_extent(x[3], a.kernel_w, a.stride, a.dilation, a.padding)};
        break;
      }
      case OpKind::matmul: {
        const auto& a = std::get<MatmulAttrs>(node.attrs);
        if (x.empty() || x.back() != a.in_features) fail("matmul inner extent mismatch for input " + to_string(x));
        y = x;
        y.back() = a.out_features;
        break;
      }
      case OpKind::bias_add: {
        const auto& a = std::get<BiasAttrs>(node.attrs);
        if (x.size() < 2 || x[1] != a.channels) fail("bias channel count does not match input " + to_string(x));
        y = x;
        break;
      }
      case OpKind::relu:
        y = x;
        break;
      case OpKind::concat: {
        const auto axis = std::get<ConcatAttrs>(node.attrs).axis;
        if (axis < 0 || axis >= static_cast<std::int64_t>(x.size())) fail("concat axis out of range");
        y = x;
        y[static_cast<std::size_t>(axis)] = 0;
        for (const auto& name : node.inputs) {
          const Shape& s = shape_of(name);
          if (s.size() != x.size()) fail("concat rank mismatch");
          for (std::size_t d = 0; d < s.size(); ++d) {
            if (static_cast<std::int64_t>(d) == axis) continue;
            if (s[d] != x[d]) fail("incompatible concat extents " + to_string(x) + " vs " + to_string(s));
          }
          y[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
        }
        break;
      }
      case OpKind::softmax_ce:
        if (x.size() < 2) fail("softmax_ce expects [batch, classes, ...]");
        y = {1};
        break;
      case OpKind::avgpool: {
        const auto f = std::get<ScaleAttrs>(node.attrs).factor;
        if (x.size() != 4) fail("avgpool expects a rank-4 input");
        if (x[2] % f || x[3] % f) fail("avgpool extent " + to_string(x) + " not divisible by " + std::to_string(f));
        y = {x[0], x[1], x[2] / f, x[3] / f};
        break;
      }
      case OpKind::upsample: {
        const auto f = std::get<ScaleAttrs>(node.attrs).factor;
        if (x.size() != 4) fail("upsample expects a rank-4 input");
        y = {x[0], x[1], x[2] * f, x[3] * f};
        break;
      }
      case OpKind::elementwise:
        for (const auto& name : node.inputs)
          if (shape_of(name) != x) fail("elementwise inputs must share a shape");
        y = x;
        break;
    }
    for (auto e : y)
      if (e <= 0) fail("non-positive computed extent " + to_string(y));
    out.push_back(std::move(y));
  }
  return out;
}

}  // namespace dlscale
