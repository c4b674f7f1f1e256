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

#include <span>
#include <vector>

#include "dlscale/core/tensor.hpp"

namespace dlscale::model {

/// Dense row-major tensor used inside the model. T is float for training
/// and double for gradient checking.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(element_count(shape)), T(0)) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != element_count(shape))
      throw ShapeError("tensor data does not match shape " + to_string(shape));
  }

  std::size_t size() const { return data.size(); }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }
  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }
};

}  // namespace dlscale::model
