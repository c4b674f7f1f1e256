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
#include <functional>
#include <utility>
#include <vector>

#include "dlscale/core/rng.hpp"
#include "dlscale/model/autodiff.hpp"
#include "dlscale/model/net.hpp"

namespace dlscale::testing {

/// Relative error between an analytic and a numerical derivative; values
/// below `floor` are compared absolutely against it.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central differences of `loss` with respect to the listed (tensor, element)
/// coordinates of `params`, compared with `analytic`.
inline GradCheck finite_difference(std::vector<std::vector<double>>& params,
                                   const std::vector<std::vector<double>>& analytic,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& coords,
                                   const std::function<double()>& loss, double h = 1e-5) {
  GradCheck r;
  for (auto [t, i] : coords) {
    double& x = params[t][i];
    const double x0 = x;
    x = x0 + h;
    const double up = loss();
    x = x0 - h;
    const double down = loss();
    x = x0;
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[t][i], (up - down) / (2.0 * h)));
    ++r.checked;
  }
  return r;
}

/// Every element of every tensor.
inline std::vector<std::pair<std::size_t, std::size_t>> all_coords(const std::vector<std::vector<double>>& v) {
  std::vector<std::pair<std::size_t, std::size_t>> c;
  for (std::size_t t = 0; t < v.size(); ++t)
    for (std::size_t i = 0; i < v[t].size(); ++i) c.emplace_back(t, i);
  return c;
}

/// Gradient check of one tape op. `build` records the op on the given
/// inputs; the scalar objective is a fixed random projection of its output.
inline GradCheck check_op(std::vector<model::Tensor<double>> inputs,
                          const std::function<model::Var(model::Tape<double>&, const std::vector<model::Var>&)>& build,
                          std::uint64_t seed = 1) {
  std::vector<std::vector<double>> values;
  for (const auto& t : inputs) values.push_back(t.data);
  std::vector<double> proj;
  auto objective = [&](bool with_grads, std::vector<std::vector<double>>* grads) {
    model::Tape<double> tape;
    std::vector<model::Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      vars.push_back(tape.parameter(model::Tensor<double>(inputs[i].shape, values[i]), "in" + std::to_string(i)));
    const model::Var out = build(tape, vars);
    const auto& y = tape.value(out);
    if (proj.empty()) {
      Rng rng(seed);
      proj.resize(y.size());
      for (auto& p : proj) p = rng.uniform(-1.0, 1.0);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += proj[i] * y.data[i];
    if (with_grads) {
      tape.backward(out, model::Tensor<double>(y.shape, proj));
      for (auto v : vars) grads->push_back(tape.has_grad(v) ? tape.grad(v).data : std::vector<double>(tape.value(v).size(), 0.0));
    }
    return s;
  };
  std::vector<std::vector<double>> analytic;
  objective(true, &analytic);
  return finite_difference(values, analytic, all_coords(values), [&] { return objective(false, nullptr); });
}

/// Gradient check of the composed network plus weighted loss in double
/// precision on `samples` randomly chosen parameters.
inline GradCheck check_network(const model::NetConfig& cfg, std::int64_t batch, std::int64_t height,
                               std::int64_t width, std::size_t samples, std::uint64_t seed) {
  const model::MiniDenseNet net(cfg);
  std::vector<std::vector<double>> params;
  for (const auto& p : net.init(seed)) params.emplace_back(p.begin(), p.end());
  // Non-zero biases and head so every parameter has a non-trivial gradient.
  Rng rng(mix_seed(seed, 99));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (net.params()[i].fan_in == 0 || net.params()[i].head)
      for (auto& v : params[i]) v = rng.uniform(-0.1, 0.1);
  model::Tensor<double> x({batch, cfg.in_channels, height, width});
  for (auto& v : x.data) v = rng.normal();
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(batch * height * width));
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(cfg.classes)));
  std::vector<double> weights;
  for (int c = 0; c < cfg.classes; ++c) weights.push_back(1.0 + c * 2.5);

  const auto res = model::loss_and_gradients<double>(net, params, x, labels, weights);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < samples; ++k) {
    const auto t = static_cast<std::size_t>(rng.below(params.size()));
    coords.emplace_back(t, static_cast<std::size_t>(rng.below(params[t].size())));
  }
  auto loss = [&] {
    model::Tape<double> tape;
    auto vars = net.bind<double>(tape, params, false);
    const auto in = tape.constant(x);
    const auto logits = tape.value(net.forward(tape, in, vars));
    return model::weighted_ce_loss(logits, labels, weights).loss;
  };
  return finite_difference(params, res.grads, coords, loss);
}

}  // namespace dlscale::testing
