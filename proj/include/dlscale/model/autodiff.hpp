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
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlscale/core/error.hpp"
#include "dlscale/model/kernels.hpp"
#include "dlscale/model/loss.hpp"
#include "dlscale/model/tensor.hpp"

namespace dlscale::model {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode tape. Operations append nodes holding their output and a
/// closure that pushes the output gradient to the inputs; backward() replays
/// the closures in reverse order. Node references are by index, so the node
/// vector may grow freely while recording.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  Var constant(Tensor<T> v, std::string name = "input") { return push(std::move(v), std::move(name), false, {}); }
  Var parameter(Tensor<T> v, std::string name) { return push(std::move(v), std::move(name), true, {}); }

  Var record(Tensor<T> value, std::string name, std::initializer_list<Var> inputs, Backward bw) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(static_cast<std::size_t>(v.id)).needs_grad;
    return push(std::move(value), std::move(name), needs, needs ? std::move(bw) : Backward{});
  }

  Var record(Tensor<T> value, std::string name, std::span<const Var> inputs, Backward bw) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(static_cast<std::size_t>(v.id)).needs_grad;
    return push(std::move(value), std::move(name), needs, needs ? std::move(bw) : Backward{});
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const std::string& name(Var v) const { return node(v).name; }
  bool needs_grad(Var v) const { return node(v).needs_grad; }

  /// Gradient buffer of `v`, zero-initialised on first access.
  Tensor<T>& grad(Var v) {
    auto& n = node(v);
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }

  bool has_grad(Var v) const { return !node(v).grad.data.empty(); }

  /// Seeds d(out) with `seed` and propagates to every node that needs it.
  void backward(Var out, const Tensor<T>& seed) {
    if (seed.shape != value(out).shape) throw ShapeError("backward seed shape mismatch");
    auto& g = grad(out);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += seed.data[i];
    for (int i = out.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.data.empty()) continue;
      n.backward(*this, i);
      if (check_finite_)
        for (const auto& other : pending_check_) verify(nodes_[static_cast<std::size_t>(other)].grad, nodes_[static_cast<std::size_t>(other)].name, "gradient");
      pending_check_.clear();
    }
  }

  /// Scalar convenience: seeds with 1.
  void backward(Var out) {
    Tensor<T> one(value(out).shape);
    for (auto& x : one.data) x = T(1);
    backward(out, one);
  }

  /// Accumulation target for input `v` inside a backward closure.
  Tensor<T>& accumulate(Var v) {
    if (check_finite_) pending_check_.push_back(v.id);
    return grad(v);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::string name;
    bool needs_grad = false;
    Backward backward;
  };

  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

  static void verify(const Tensor<T>& t, const std::string& name, const char* what) {
    for (T x : t.data)
      if (!std::isfinite(x)) throw NumericError(std::string("non-finite ") + what + " in layer '" + name + "'");
  }

  Var push(Tensor<T> v, std::string name, bool needs, Backward bw) {
    if (check_finite_) verify(v, name, "activation");
    nodes_.push_back({std::move(v), {}, std::move(name), needs, std::move(bw)});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  bool check_finite_;
  std::vector<Node> nodes_;
  std::vector<int> pending_check_;
};

namespace ops {

template <class T>
Var conv2d(Tape<T>& t, Var x, Var w, kernels::ConvSpec spec, std::string name = "conv2d") {
  const auto& xs = t.value(x).shape;
  const auto& ws = t.value(w).shape;
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1] || ws[2] != spec.kernel_h || ws[3] != spec.kernel_w)
    throw ShapeError(name + ": conv input " + to_string(xs) + " incompatible with weight " + to_string(ws));
  auto y = kernels::conv2d_forward(t.value(x), t.value(w), spec);
  return t.record(std::move(y), std::move(name), {x, w}, [x, w, spec](Tape<T>& tp, int self) {
    const auto& gy = tp.grad(Var{self});
    Tensor<T>* gx = tp.needs_grad(x) ? &tp.accumulate(x) : nullptr;
    Tensor<T>* gw = tp.needs_grad(w) ? &tp.accumulate(w) : nullptr;
    kernels::conv2d_backward(tp.value(x), tp.value(w), spec, gy, gx, gw);
  });
}

/// Adds b[C] along axis 1 of x[N, C, ...].
template <class T>
Var bias_add(Tape<T>& t, Var x, Var b, std::string name = "bias_add") {
  const auto& xs = t.value(x).shape;
  if (xs.size() < 2 || t.value(b).size() != static_cast<std::size_t>(xs[1]))
    throw ShapeError(name + ": bias length does not match channels of " + to_string(xs));
  const auto n = xs[0], c = xs[1], inner = element_count(xs) / (n * c);
  Tensor<T> y = t.value(x);
  const auto& bv = t.value(b).data;
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T* p = y.data.data() + (i * c + ch) * inner;
      for (std::int64_t j = 0; j < inner; ++j) p[j] += bv[static_cast<std::size_t>(ch)];
    }
  return t.record(std::move(y), std::move(name), {x, b}, [x, b, n, c, inner](Tape<T>& tp, int self) {
    const auto& gy = tp.grad(Var{self});
    if (tp.needs_grad(x)) {
      auto& gx = tp.accumulate(x);
      for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
    }
    if (tp.needs_grad(b)) {
      auto& gb = tp.accumulate(b);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const T* p = gy.data.data() + (i * c + ch) * inner;
          T s = 0;
          for (std::int64_t j = 0; j < inner; ++j) s += p[j];
          gb.data[static_cast<std::size_t>(ch)] += s;
        }
    }
  });
}

template <class T>
Var relu(Tape<T>& t, Var x, std::string name = "relu") {
  Tensor<T> y = t.value(x);
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  return t.record(std::move(y), std::move(name), {x}, [x](Tape<T>& tp, int self) {
    const auto& gy = tp.grad(Var{self});
    const auto& xv = tp.value(x).data;
    auto& gx = tp.accumulate(x);
    for (std::size_t i = 0; i < gy.data.size(); ++i)
      if (xv[i] > T(0)) gx.data[i] += gy.data[i];
  });
}

/// Concatenation along the channel axis of [N, C_i, H, W] inputs.
template <class T>
Var concat(Tape<T>& t, std::vector<Var> xs, std::string name = "concat") {
  if (xs.size() < 2) throw ShapeError(name + ": concat needs at least two inputs");
  const Shape& s0 = t.value(xs[0]).shape;
  if (s0.size() != 4) throw ShapeError(name + ": concat expects rank-4 inputs");
  std::int64_t c = 0;
  for (Var v : xs) {
    const Shape& s = t.value(v).shape;
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
      throw ShapeError(name + ": incompatible concat extents " + to_string(s0) + " vs " + to_string(s));
    c += s[1];
  }
  const auto n = s0[0], hw = s0[2] * s0[3];
  Tensor<T> y({n, c, s0[2], s0[3]});
  for (std::int64_t b = 0; b < n; ++b) {
    T* dst = y.data.data() + b * c * hw;
    for (Var v : xs) {
      const auto& xv = t.value(v);
      const auto len = xv.dim(1) * hw;
      const T* src = xv.data.data() + b * len;
      std::copy(src, src + len, dst);
      dst += len;
    }
  }
  return t.record(std::move(y), std::move(name), std::span<const Var>(xs), [xs, n, c, hw](Tape<T>& tp, int self) {
    const auto& gy = tp.grad(Var{self});
    std::int64_t offset = 0;
    for (Var v : xs) {
      const auto len = tp.value(v).dim(1) * hw;
      if (tp.needs_grad(v)) {
        auto& gx = tp.accumulate(v);
        for (std::int64_t b = 0; b < n; ++b) {
          const T* src = gy.data.data() + b * c * hw + offset;
          T* dst = gx.data.data() + b * len;
          for (std::int64_t i = 0; i < len; ++i) dst[i] += src[i];
        }
      }
      offset += len;
    }
  });
}

template <class T>
Var avgpool(Tape<T>& t, Var x, std::int64_t factor, std::string name = "avgpool") {
  auto y = kernels::avgpool_forward(t.value(x), factor);
  return t.record(std::move(y), std::move(name), {x}, [x, factor](Tape<T>& tp, int self) {
    kernels::avgpool_backward(tp.grad(Var{self}), factor, tp.accumulate(x));
  });
}

template <class T>
Var upsample(Tape<T>& t, Var x, std::int64_t factor, std::string name = "upsample") {
  auto y = kernels::upsample_forward(t.value(x), factor);
  return t.record(std::move(y), std::move(name), {x}, [x, factor](Tape<T>& tp, int self) {
    kernels::upsample_backward(tp.grad(Var{self}), factor, tp.accumulate(x));
  });
}

/// x[..., K] times w[K, P].
template <class T>
Var matmul(Tape<T>& t, Var x, Var w, std::string name = "matmul") {
  const auto& xs = t.value(x).shape;
  const auto& ws = t.value(w).shape;
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0])
    throw ShapeError(name + ": cannot multiply " + to_string(xs) + " by " + to_string(ws));
  const auto k = ws[0], p = ws[1], m = element_count(xs) / k;
  Shape ys = xs;
  ys.back() = p;
  Tensor<T> y(ys);
  kernels::MapMat<T>(y.data.data(), m, p).noalias() =
      kernels::CMapMat<T>(t.value(x).data.data(), m, k) * kernels::CMapMat<T>(t.value(w).data.data(), k, p);
  return t.record(std::move(y), std::move(name), {x, w}, [x, w, m, k, p](Tape<T>& tp, int self) {
    kernels::CMapMat<T> gy(tp.grad(Var{self}).data.data(), m, p);
    if (tp.needs_grad(x))
      kernels::MapMat<T>(tp.accumulate(x).data.data(), m, k).noalias() +=
          gy * kernels::CMapMat<T>(tp.value(w).data.data(), k, p).transpose();
    if (tp.needs_grad(w))
      kernels::MapMat<T>(tp.accumulate(w).data.data(), k, p).noalias() +=
          kernels::CMapMat<T>(tp.value(x).data.data(), m, k).transpose() * gy;
  });
}

/// Elementwise sum of equally shaped inputs.
template <class T>
Var add(Tape<T>& t, Var a, Var b, std::string name = "add") {
  if (t.value(a).shape != t.value(b).shape) throw ShapeError(name + ": elementwise inputs must share a shape");
  Tensor<T> y = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += bv[i];
  return t.record(std::move(y), std::move(name), {a, b}, [a, b](Tape<T>& tp, int self) {
    const auto& gy = tp.grad(Var{self});
    for (Var v : {a, b})
      if (tp.needs_grad(v)) {
        auto& g = tp.accumulate(v);
        for (std::size_t i = 0; i < gy.data.size(); ++i) g.data[i] += gy.data[i];
      }
  });
}

/// Elementwise product of equally shaped inputs.
template <class T>
Var mul(Tape<T>& t, Var a, Var b, std::string name = "mul") {
  if (t.value(a).shape != t.value(b).shape) throw ShapeError(name + ": elementwise inputs must share a shape");
  Tensor<T> y = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= bv[i];
  return t.record(std::move(y), std::move(name), {a, b}, [a, b](Tape<T>& tp, int self) {
    const auto& gy = tp.grad(Var{self});
    if (tp.needs_grad(a)) {
      auto& g = tp.accumulate(a);
      const auto& bv2 = tp.value(b).data;
      for (std::size_t i = 0; i < gy.data.size(); ++i) g.data[i] += gy.data[i] * bv2[i];
    }
    if (tp.needs_grad(b)) {
      auto& g = tp.accumulate(b);
      const auto& av = tp.value(a).data;
      for (std::size_t i = 0; i < gy.data.size(); ++i) g.data[i] += gy.data[i] * av[i];
    }
  });
}

/// Weighted softmax cross-entropy as a scalar tape node.
template <class T>
Var softmax_ce(Tape<T>& t, Var logits, std::span<const std::uint8_t> labels, std::span<const double> weights,
               double normalizer = 0.0, LossResult<T>* stats = nullptr, std::string name = "softmax_ce") {
  auto res = weighted_ce_loss(t.value(logits), labels, weights, normalizer);
  if (stats) {
    stats->loss = res.loss;
    stats->weighted_sum = res.weighted_sum;
    stats->weight_sum = res.weight_sum;
  }
  Tensor<T> y({1}, {static_cast<T>(res.loss)});
  auto grad = std::make_shared<Tensor<T>>(std::move(res.grad));
  return t.record(std::move(y), std::move(name), {logits}, [logits, grad](Tape<T>& tp, int self) {
    const T s = tp.grad(Var{self}).data[0];
    auto& g = tp.accumulate(logits);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += s * grad->data[i];
  });
}

}  // namespace ops
}  // namespace dlscale::model
