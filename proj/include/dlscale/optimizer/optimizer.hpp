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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlscale/core/error.hpp"

namespace dlscale::optim {

struct OptimConfig {
  double lr = 0.1;            // global rate; LARC clips the layer rate to it
  double momentum = 0.9;      // in [0, 1)
  double trust = 0.02;        // LARC trust coefficient
  double weight_decay = 0.0;  // folded into the momentum accumulator
  double epsilon = 1e-8;
  bool larc = true;
  int lag = 0;                // 0 or 1

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(trust > 0.0)) throw ConfigError("trust coefficient must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (lag < 0) throw ConfigError("lag must be >= 0");
    if (lag > 1) throw ConfigError("only lag 0 and lag 1 are implemented");
  }
};

/// One layer's weights with its momentum and lagged-gradient buffers.
template <class T>
struct LayerParam {
  std::string name;
  std::vector<T> weights;
  std::vector<T> momentum;
  std::optional<std::vector<T>> lagged;

  LayerParam() = default;
  LayerParam(std::string n, std::vector<T> w)
      : name(std::move(n)), weights(std::move(w)), momentum(weights.size(), T(0)) {}
};

template <class T>
double l2_norm(std::span<const T> v) {
  double s = 0.0;
  for (T x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

/// LARC layer rate: trust*|w| / (|g| + wd*|w| + eps), clipped to the global
/// rate. Layers with zero weights use the global rate.
template <class T>
double larc_effective_lr(std::span<const T> w, std::span<const T> g, const OptimConfig& cfg) {
  if (w.size() != g.size()) throw ShapeError("larc: weight/gradient length mismatch");
  const double wn = l2_norm(w);
  const double gn = l2_norm(g);
  if (!std::isfinite(wn) || !std::isfinite(gn)) throw NumericError("larc: non-finite norm");
  if (wn == 0.0) return cfg.lr;
  const double local = cfg.trust * wn / (gn + cfg.weight_decay * wn + cfg.epsilon);
  return std::min(local, cfg.lr);
}

/// m <- momentum*m + g + wd*w ; w <- w - lr*m. The parameter is left
/// untouched if the update would be non-finite.
template <class T>
void sgd_step(LayerParam<T>& p, std::span<const T> g, double lr, const OptimConfig& cfg) {
  const std::size_t n = p.weights.size();
  if (g.size() != n || p.momentum.size() != n)
    throw ShapeError(p.name + ": gradient length " + std::to_string(g.size()) + " != weight length " +
                     std::to_string(n));
  std::vector<T> m(n), w(n);
  const T beta = static_cast<T>(cfg.momentum);
  const T wd = static_cast<T>(cfg.weight_decay);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta * p.momentum[i] + g[i] + wd * p.weights[i];
    w[i] = p.weights[i] - rate * m[i];
    if (!std::isfinite(w[i]) || !std::isfinite(m[i])) throw NumericError(p.name + ": non-finite weight update");
  }
  p.momentum = std::move(m);
  p.weights = std::move(w);
}

/// Immediate update with `g`: LARC rate selection (if enabled) then SGD.
template <class T>
void apply_gradient(LayerParam<T>& p, std::span<const T> g, const OptimConfig& cfg) {
  const double lr = cfg.larc ? larc_effective_lr<T>(p.weights, g, cfg) : cfg.lr;
  sgd_step(p, g, lr, cfg);
}

/// Lag-aware update. lag 0 applies `g_current`; lag 1 applies the gradient
/// buffered on the previous call and buffers `g_current` (the first call
/// only buffers).
template <class T>
void lagged_apply(LayerParam<T>& p, std::span<const T> g_current, const OptimConfig& cfg) {
  if (cfg.lag == 0) {
    apply_gradient(p, g_current, cfg);
    return;
  }
  if (cfg.lag != 1) throw ConfigError("only lag 0 and lag 1 are implemented");
  if (g_current.size() != p.weights.size()) throw ShapeError(p.name + ": gradient length mismatch");
  if (p.lagged) apply_gradient<T>(p, *p.lagged, cfg);
  p.lagged.emplace(g_current.begin(), g_current.end());
}

}  // namespace dlscale::optim
