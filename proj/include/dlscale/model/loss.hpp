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
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dlscale/core/error.hpp"
#include "dlscale/model/tensor.hpp"

namespace dlscale::model {

/// Per-class weights 1/sqrt(f_c). Every frequency must be positive.
inline std::vector<double> inverse_sqrt_weights(std::span<const double> freqs) {
  std::vector<double> w;
  w.reserve(freqs.size());
  for (double f : freqs) {
    if (!(f > 0.0) || !std::isfinite(f)) throw ConfigError("class frequencies must be positive to derive weights");
    w.push_back(1.0 / std::sqrt(f));
  }
  return w;
}

template <class T>
struct LossResult {
  double loss = 0.0;          // weighted_sum / normalizer
  double weighted_sum = 0.0;  // sum_p w_y(p) * ce(p)
  double weight_sum = 0.0;    // sum_p w_y(p)
  Tensor<T> grad;             // dL/dlogits
};

/// Weighted softmax cross-entropy over logits [N, K, H, W] and labels
/// [N, H, W]. The loss is sum_p w_y * ce_p / D where D is the batch weight
/// sum, or `normalizer` when it is positive (a fixed D keeps gradients
/// additive across data-parallel shards).
template <class T>
LossResult<T> weighted_ce_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                               std::span<const double> weights, double normalizer = 0.0) {
  if (logits.shape.size() != 4) throw ShapeError("logits must be [N, K, H, W]");
  const auto n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  if (static_cast<std::int64_t>(labels.size()) != n * hw) throw ShapeError("labels do not match logits extent");
  if (static_cast<std::int64_t>(weights.size()) != k) throw ShapeError("need one weight per class");
  for (double w : weights)
    if (!(w > 0.0)) throw ConfigError("class weights must be positive");

  LossResult<T> res;
  res.grad = Tensor<T>(logits.shape);
  std::vector<double> prob(static_cast<std::size_t>(k));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t p = 0; p < hw; ++p) {
      const std::uint8_t y = labels[static_cast<std::size_t>(b * hw + p)];
      if (y >= k) throw ConfigError("label " + std::to_string(y) + " outside class range");
      const T* z = logits.data.data() + b * k * hw + p;
      double zmax = z[0];
      for (std::int64_t c = 1; c < k; ++c) zmax = std::max(zmax, static_cast<double>(z[c * hw]));
      double denom = 0.0;
      for (std::int64_t c = 0; c < k; ++c) {
        prob[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(z[c * hw]) - zmax);
        denom += prob[static_cast<std::size_t>(c)];
      }
      const double w = weights[y];
      res.weighted_sum += w * (std::log(denom) - (static_cast<double>(z[y * hw]) - zmax));
      res.weight_sum += w;
      T* g = res.grad.data.data() + b * k * hw + p;
      for (std::int64_t c = 0; c < k; ++c) {
        const double pc = prob[static_cast<std::size_t>(c)] / denom;
        g[c * hw] = static_cast<T>(w * (pc - (c == y ? 1.0 : 0.0)));
      }
    }
  const double d = normalizer > 0.0 ? normalizer : res.weight_sum;
  res.loss = res.weighted_sum / d;
  const T inv = static_cast<T>(1.0 / d);
  for (auto& g : res.grad.data) g *= inv;
  return res;
}

/// Per-pixel softmax probabilities, same layout as the logits.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const auto n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  Tensor<T> out(logits.shape);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t p = 0; p < hw; ++p) {
      const T* z = logits.data.data() + b * k * hw + p;
      T* o = out.data.data() + b * k * hw + p;
      double zmax = z[0];
      for (std::int64_t c = 1; c < k; ++c) zmax = std::max(zmax, static_cast<double>(z[c * hw]));
      double denom = 0.0;
      for (std::int64_t c = 0; c < k; ++c) denom += std::exp(static_cast<double>(z[c * hw]) - zmax);
      for (std::int64_t c = 0; c < k; ++c) o[c * hw] = static_cast<T>(std::exp(static_cast<double>(z[c * hw]) - zmax) / denom);
    }
  return out;
}

}  // namespace dlscale::model
