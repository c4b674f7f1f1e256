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
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dlscale/core/error.hpp"

namespace dlscale {

using Shape = std::vector<std::int64_t>;

inline std::int64_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         [](std::int64_t a, std::int64_t b) { return a * b; });
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline void require_positive(const Shape& shape, const std::string& what) {
  for (auto e : shape)
    if (e <= 0) throw ShapeError(what + ": non-positive extent in " + to_string(shape));
}

/// A named flat float buffer with a shape; the unit of collective reduction.
class NamedTensor {
 public:
  NamedTensor() = default;

  NamedTensor(std::string name, Shape shape, std::vector<float> data)
      : name_(std::move(name)), shape_(std::move(shape)), data_(std::move(data)) {
    if (name_.empty()) throw ShapeError("tensor name must be non-empty");
    require_positive(shape_, name_);
    if (static_cast<std::int64_t>(data_.size()) != element_count(shape_))
      throw ShapeError(name_ + ": data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
  }

  /// Zero-filled tensor of the given shape.
  NamedTensor(std::string name, Shape shape)
      : NamedTensor(name, shape, std::vector<float>(static_cast<std::size_t>(checked_count(shape)))) {}

  const std::string& name() const { return name_; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<const float> values() const { return data_; }
  std::span<float> mutable_values() { return data_; }
  const std::vector<float>& vector() const { return data_; }
  std::vector<float> release() && { return std::move(data_); }

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;

 private:
  static std::int64_t checked_count(const Shape& s) {
    require_positive(s, "tensor");
    return element_count(s);
  }

  std::string name_;
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace dlscale
