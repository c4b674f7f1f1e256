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

#include <cmath>
#include <cstdint>
#include <span>
#include <tuple>
#include <string>
#include <vector>

#include "dlscale/core/error.hpp"
#include "dlscale/core/op_graph.hpp"
#include "dlscale/core/rng.hpp"
#include "dlscale/core/tensor.hpp"
#include "dlscale/model/autodiff.hpp"

namespace dlscale::model {

struct NetConfig {
  int in_channels = 16;
  int classes = 3;
  int stem_channels = 16;
  int growth = 16;
  int levels = 2;  // 0 keeps every layer at full resolution
  int layers_per_block = 2;
  bool zero_init_head = false;

  void validate() const {
    if (in_channels <= 0 || classes < 2 || stem_channels <= 0 || growth <= 0 || layers_per_block <= 0)
      throw ConfigError("network widths must be positive and classes >= 2");
    if (levels < 0 || levels > 6) throw ConfigError("levels must lie in [0, 6]");
  }

  std::int64_t downsample_factor() const { return std::int64_t{1} << levels; }
};

struct ParamSpec {
  std::string name;
  Shape shape;
  std::int64_t fan_in = 0;  // 0 for biases
  bool head = false;
};

namespace detail {

/// Collects parameter names and shapes.
struct SpecBuilder {
  using Handle = int;
  std::vector<ParamSpec> specs;
  Handle input(int) { return 0; }
  Handle conv(const std::string& n, Handle, int cin, int cout, int k, bool head) {
    specs.push_back({n + ".weight", {cout, cin, k, k}, std::int64_t{cin} * k * k, head});
    return 0;
  }
  Handle bias(const std::string& n, Handle, int c, bool head) {
    specs.push_back({n + ".bias", {c}, 0, head});
    return 0;
  }
  Handle relu(const std::string&, Handle) { return 0; }
  Handle concat(const std::string&, std::vector<Handle>) { return 0; }
  Handle avgpool(const std::string&, Handle) { return 0; }
  Handle upsample(const std::string&, Handle) { return 0; }
};

/// Emits the op graph consumed by FLOP counting and shape inference.
struct GraphBuilder {
  using Handle = std::string;
  OpGraph graph;
  Handle input(int) {
    graph.add_input("input");
    return "input";
  }
  Handle conv(const std::string& n, Handle x, int cin, int cout, int k, bool) {
    ConvAttrs a;
    a.kernel_h = a.kernel_w = k;
    a.in_channels = cin;
    a.out_channels = cout;
    return graph.add({n, OpKind::conv2d, {x}, a}).name;
  }
  Handle bias(const std::string& n, Handle x, int c, bool) {
    return graph.add({n + ".bias_add", OpKind::bias_add, {x}, BiasAttrs{c}}).name;
  }
  Handle relu(const std::string& n, Handle x) { return graph.add({n, OpKind::relu, {x}, NoAttrs{}}).name; }
  Handle concat(const std::string& n, std::vector<Handle> xs) {
    return graph.add({n, OpKind::concat, std::move(xs), ConcatAttrs{}}).name;
  }
  Handle avgpool(const std::string& n, Handle x) { return graph.add({n, OpKind::avgpool, {x}, ScaleAttrs{2}}).name; }
  Handle upsample(const std::string& n, Handle x) {
    return graph.add({n, OpKind::upsample, {x}, ScaleAttrs{2}}).name;
  }
};

/// Records the forward pass on a tape; parameters are consumed in the same
/// order SpecBuilder produced them.
template <class T>
struct TapeBuilder {
  using Handle = Var;
  Tape<T>& tape;
  Var x;
  std::span<const Var> params;
  std::size_t next = 0;

  Var take() {
    if (next >= params.size()) throw ShapeError("network consumed more parameters than were bound");
    return params[next++];
  }
  Handle input(int) { return x; }
  Handle conv(const std::string& n, Handle h, int, int, int k, bool) {
    kernels::ConvSpec s;
    s.kernel_h = s.kernel_w = k;
    return ops::conv2d(tape, h, take(), s, n);
  }
  Handle bias(const std::string& n, Handle h, int, bool) { return ops::bias_add(tape, h, take(), n + ".bias_add"); }
  Handle relu(const std::string& n, Handle h) { return ops::relu(tape, h, n); }
  Handle concat(const std::string& n, std::vector<Handle> xs) { return ops::concat(tape, std::move(xs), n); }
  Handle avgpool(const std::string& n, Handle h) { return ops::avgpool(tape, h, 2, n); }
  Handle upsample(const std::string& n, Handle h) { return ops::upsample(tape, h, 2, n); }
};

template <class B>
typename B::Handle conv_unit(B& b, const std::string& n, typename B::Handle x, int cin, int cout, int k) {
  auto h = b.conv(n + ".conv", x, cin, cout, k, false);
  h = b.bias(n + ".conv", h, cout, false);
  return b.relu(n + ".relu", h);
}

/// Dense block: layer i sees the block input concatenated with every
/// earlier layer's output. Returns the block input plus all new features
/// (full) or the new features only.
template <class B>
std::pair<typename B::Handle, int> dense_block(B& b, const std::string& n, typename B::Handle x, int cin,
                                               const NetConfig& c, bool full) {
  std::vector<typename B::Handle> feats{x};
  int ch = cin;
  for (int i = 0; i < c.layers_per_block; ++i) {
    const std::string ln = n + ".layer" + std::to_string(i);
    auto in = feats.size() == 1 ? x : b.concat(ln + ".in", feats);
    feats.push_back(conv_unit(b, ln, in, ch, c.growth, 3));
    ch += c.growth;
  }
  if (full) return {b.concat(n + ".out", feats), ch};
  std::vector<typename B::Handle> fresh(feats.begin() + 1, feats.end());
  const int out = c.layers_per_block * c.growth;
  if (fresh.size() == 1) return {fresh.front(), out};
  return {b.concat(n + ".out", fresh), out};
}

template <class B>
typename B::Handle build(B& b, const NetConfig& c) {
  auto h = conv_unit(b, "stem", b.input(c.in_channels), c.in_channels, c.stem_channels, 3);
  int ch = c.stem_channels;
  std::vector<std::pair<typename B::Handle, int>> skips;
  for (int l = 0; l < c.levels; ++l) {
    const std::string n = "down" + std::to_string(l);
    auto [out, oc] = dense_block(b, n, h, ch, c, true);
    skips.emplace_back(out, oc);
    h = conv_unit(b, n + ".td", out, oc, oc, 1);
    h = b.avgpool(n + ".pool", h);
    ch = oc;
  }
  std::tie(h, ch) = dense_block(b, "mid", h, ch, c, c.levels == 0);
  for (int l = c.levels - 1; l >= 0; --l) {
    const std::string n = "up" + std::to_string(l);
    h = b.upsample(n + ".upsample", h);
    h = b.concat(n + ".skip", {h, skips[static_cast<std::size_t>(l)].first});
    std::tie(h, ch) = dense_block(b, n, h, ch + skips[static_cast<std::size_t>(l)].second, c, l == 0);
  }
  h = b.conv("head.conv", h, ch, c.classes, 1, true);
  return b.bias("head.conv", h, c.classes, true);
}

}  // namespace detail

/// Dense-block encoder/decoder segmentation network producing per-pixel
/// class logits at input resolution.
class MiniDenseNet {
 public:
  explicit MiniDenseNet(NetConfig cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    detail::SpecBuilder b;
    detail::build(b, cfg_);
    specs_ = std::move(b.specs);
  }

  const NetConfig& config() const { return cfg_; }
  const std::vector<ParamSpec>& params() const { return specs_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& s : specs_) n += static_cast<std::size_t>(element_count(s.shape));
    return n;
  }

  /// He-uniform weights, zero biases; the head is zeroed when requested.
  std::vector<std::vector<float>> init(std::uint64_t seed) const {
    std::vector<std::vector<float>> out;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const auto& s = specs_[i];
      std::vector<float> v(static_cast<std::size_t>(element_count(s.shape)), 0.0f);
      if (s.fan_in > 0 && !(s.head && cfg_.zero_init_head)) {
        Rng rng(mix_seed(seed, i));
        const double bound = std::sqrt(6.0 / static_cast<double>(s.fan_in));
        for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
      }
      out.push_back(std::move(v));
    }
    return out;
  }

  void check_input(const Shape& s) const {
    const auto f = cfg_.downsample_factor();
    if (s.size() != 4 || s[1] != cfg_.in_channels)
      throw ShapeError("input must be [N, " + std::to_string(cfg_.in_channels) + ", H, W], got " + to_string(s));
    if (s[0] <= 0 || s[2] <= 0 || s[3] <= 0 || s[2] % f != 0 || s[3] % f != 0)
      throw ShapeError("spatial extent " + to_string(s) + " not divisible by downsample factor " + std::to_string(f));
  }

  /// Registers parameter values on the tape in spec order.
  template <class T>
  std::vector<Var> bind(Tape<T>& tape, std::span<const std::vector<T>> values, bool trainable = true) const {
    if (values.size() != specs_.size()) throw ShapeError("expected " + std::to_string(specs_.size()) + " parameters");
    std::vector<Var> vars;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      Tensor<T> t(specs_[i].shape, values[i]);
      vars.push_back(trainable ? tape.parameter(std::move(t), specs_[i].name) : tape.constant(std::move(t), specs_[i].name));
    }
    return vars;
  }

  template <class T>
  Var forward(Tape<T>& tape, Var x, std::span<const Var> params) const {
    check_input(tape.value(x).shape);
    detail::TapeBuilder<T> b{tape, x, params};
    Var out = detail::build(b, cfg_);
    if (b.next != params.size()) throw ShapeError("network left parameters unused");
    return out;
  }

  /// Inference-only logits.
  template <class T>
  Tensor<T> predict(std::span<const std::vector<T>> values, Tensor<T> input) const {
    Tape<T> tape;
    auto params = bind(tape, values, false);
    Var x = tape.constant(std::move(input));
    return tape.value(forward(tape, x, params));
  }

  /// Graph of the forward pass, optionally terminated by the loss node.
  OpGraph op_graph(bool with_loss = false) const {
    detail::GraphBuilder b;
    auto out = detail::build(b, cfg_);
    if (with_loss) b.graph.add({"loss", OpKind::softmax_ce, {out}, NoAttrs{}});
    return std::move(b.graph);
  }

 private:
  NetConfig cfg_;
  std::vector<ParamSpec> specs_;
};

template <class T>
struct StepResult {
  LossResult<T> loss;  // loss value and weight statistics; grad left empty
  Tensor<T> logits;
  std::vector<std::vector<T>> grads;  // spec order
};

/// Forward, weighted loss and backward for one batch.
template <class T>
StepResult<T> loss_and_gradients(const MiniDenseNet& net, std::span<const std::vector<T>> values, Tensor<T> input,
                                  std::span<const std::uint8_t> labels, std::span<const double> weights,
                                  double normalizer = 0.0) {
  Tape<T> tape;
  auto params = net.bind(tape, values);
  Var x = tape.constant(std::move(input));
  Var logits = net.forward(tape, x, params);
  StepResult<T> r;
  Var loss = ops::softmax_ce(tape, logits, labels, weights, normalizer, &r.loss);
  tape.backward(loss);
  r.logits = tape.value(logits);
  for (std::size_t i = 0; i < params.size(); ++i)
    r.grads.push_back(tape.has_grad(params[i]) ? tape.grad(params[i]).data
                                               : std::vector<T>(values[i].size(), T(0)));
  return r;
}

/// Gradients as named tensors in spec order.
inline std::vector<NamedTensor> named_gradients(const MiniDenseNet& net, std::vector<std::vector<float>> grads) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < grads.size(); ++i)
    out.emplace_back(net.params()[i].name, net.params()[i].shape, std::move(grads[i]));
  return out;
}

}  // namespace dlscale::model
