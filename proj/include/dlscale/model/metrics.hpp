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
#include <span>
#include <vector>

#include "dlscale/core/error.hpp"
#include "dlscale/model/tensor.hpp"

namespace dlscale::model {

/// Per-pixel argmax over logits [N, K, H, W]; ties go to the lower class.
template <class T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits) {
  if (logits.shape.size() != 4) throw ShapeError("logits must be [N, K, H, W]");
  const auto n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n * hw));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t p = 0; p < hw; ++p) {
      const T* z = logits.data.data() + b * k * hw + p;
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < k; ++c)
        if (z[c * hw] > z[best * hw]) best = c;
      out[static_cast<std::size_t>(b * hw + p)] = static_cast<std::uint8_t>(best);
    }
  return out;
}

/// Accumulates intersection and union counts per class across batches.
class IoUAccumulator {
 public:
  explicit IoUAccumulator(int classes = 3)
      : inter_(static_cast<std::size_t>(classes)), uni_(static_cast<std::size_t>(classes)),
        label_(static_cast<std::size_t>(classes)) {}

  void add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> labels) {
    if (pred.size() != labels.size()) throw ShapeError("prediction and label counts differ");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto p = pred[i], y = labels[i];
      if (p >= inter_.size() || y >= inter_.size()) throw ShapeError("class index out of range");
      if (p == y) {
        ++inter_[p];
        ++uni_[p];
      } else {
        ++uni_[p];
        ++uni_[y];
      }
      ++label_[y];
      ++total_;
      if (p == y) ++correct_;
    }
  }

  /// |pred ∩ label| / |pred ∪ label|, 1 when both sets are empty.
  double iou(int c) const {
    const auto i = static_cast<std::size_t>(c);
    if (i >= inter_.size()) throw ShapeError("class index out of range");
    return uni_[i] == 0 ? 1.0 : static_cast<double>(inter_[i]) / static_cast<double>(uni_[i]);
  }

  double accuracy() const { return total_ == 0 ? 1.0 : static_cast<double>(correct_) / static_cast<double>(total_); }

  double label_frequency(int c) const {
    return total_ == 0 ? 0.0 : static_cast<double>(label_.at(static_cast<std::size_t>(c))) / static_cast<double>(total_);
  }

  int classes() const { return static_cast<int>(inter_.size()); }

 private:
  std::vector<std::uint64_t> inter_, uni_, label_;
  std::uint64_t total_ = 0, correct_ = 0;
};

/// IoU of one class between two label maps.
inline double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> labels, int c) {
  if (pred.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] == c, b = labels[i] == c;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace dlscale::model
