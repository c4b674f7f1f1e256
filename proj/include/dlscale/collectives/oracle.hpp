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
#include <span>
#include <vector>

#include "dlscale/collectives/allreduce.hpp"
#include "dlscale/core/error.hpp"

namespace dlscale::collectives {

/// Reference reduction: left-to-right in rank order.
inline std::vector<float> oracle_reduce(std::span<const std::vector<float>> inputs, ReduceOp op = ReduceOp::sum) {
  if (inputs.empty()) throw ShapeError("oracle_reduce needs at least one input");
  std::vector<float> acc = inputs.front();
  for (std::size_t r = 1; r < inputs.size(); ++r) {
    if (inputs[r].size() != acc.size()) throw ShapeError("oracle_reduce: length mismatch at input " + std::to_string(r));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += inputs[r][i];
  }
  if (op == ReduceOp::mean)
    for (auto& x : acc) x /= static_cast<float>(inputs.size());
  return acc;
}

/// Largest per-element error of `result` against `reference`, relative to
/// the magnitude sum_p |x_p,i| of the inputs (scaled by 1/p for mean), so
/// cancelling inputs do not inflate the error.
inline double max_scaled_error(std::span<const float> result, std::span<const float> reference,
                               std::span<const std::vector<float>> inputs, ReduceOp op = ReduceOp::sum) {
  if (result.size() != reference.size()) throw ShapeError("max_scaled_error: length mismatch");
  const double div = op == ReduceOp::mean ? static_cast<double>(inputs.size()) : 1.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < result.size(); ++i) {
    double mag = 0.0;
    for (const auto& x : inputs) mag += std::abs(static_cast<double>(x[i]));
    mag /= div;
    const double err = std::abs(static_cast<double>(result[i]) - static_cast<double>(reference[i]));
    worst = std::max(worst, mag > 0.0 ? err / mag : err);
  }
  return worst;
}

}  // namespace dlscale::collectives
