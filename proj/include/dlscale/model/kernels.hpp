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

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <cstring>

#include "dlscale/core/op_graph.hpp"
#include "dlscale/model/tensor.hpp"

namespace dlscale::model::kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvSpec {
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int dilation = 1;
  Padding padding = Padding::same;
};

/// Resolved geometry of one conv over an [C, H, W] image.
struct ConvGeom {
  std::int64_t c, h, w;       // input
  std::int64_t kh, kw, stride, dil;
  std::int64_t oh, ow;        // output
  std::int64_t pad_top, pad_left;

  std::int64_t col_rows() const { return c * kh * kw; }
  std::int64_t col_cols() const { return oh * ow; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad_top == 0 && pad_left == 0; }
};

inline ConvGeom conv_geom(std::int64_t c, std::int64_t h, std::int64_t w, const ConvSpec& s) {
  ConvGeom g{c, h, w, s.kernel_h, s.kernel_w, s.stride, s.dilation, 0, 0, 0, 0};
  g.oh = conv_out_extent(h, s.kernel_h, s.stride, s.dilation, s.padding);
  g.ow = conv_out_extent(w, s.kernel_w, s.stride, s.dilation, s.padding);
  if (g.oh <= 0 || g.ow <= 0) throw ShapeError("convolution output would be empty");
  if (s.padding == Padding::same) {
    const auto pad_h = std::max<std::int64_t>((g.oh - 1) * s.stride + s.dilation * (s.kernel_h - 1) + 1 - h, 0);
    const auto pad_w = std::max<std::int64_t>((g.ow - 1) * s.stride + s.dilation * (s.kernel_w - 1) + 1 - w, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  }
  return g;
}

/// Unfolds one image [C, H, W] into columns [C*kh*kw, oh*ow].
template <class T>
void im2col(const T* in, const ConvGeom& g, T* col) {
  for (std::int64_t c = 0; c < g.c; ++c)
    for (std::int64_t i = 0; i < g.kh; ++i)
      for (std::int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * g.oh * g.ow;
        const T* plane = in + c * g.h * g.w;
        for (std::int64_t y = 0; y < g.oh; ++y) {
          T* out = row + y * g.ow;
          const std::int64_t iy = y * g.stride - g.pad_top + i * g.dil;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.ow, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          const std::int64_t x0 = j * g.dil - g.pad_left;
          for (std::int64_t x = 0; x < g.ow; ++x) {
            const std::int64_t ix = x * g.stride + x0;
            out[x] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
}

/// Adjoint of im2col: accumulates columns back into an image gradient.
template <class T>
void col2im(const T* col, const ConvGeom& g, T* in_grad) {
  for (std::int64_t c = 0; c < g.c; ++c)
    for (std::int64_t i = 0; i < g.kh; ++i)
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * g.oh * g.ow;
        T* plane = in_grad + c * g.h * g.w;
        for (std::int64_t y = 0; y < g.oh; ++y) {
          const std::int64_t iy = y * g.stride - g.pad_top + i * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + y * g.ow;
          T* dst = plane + iy * g.w;
          const std::int64_t x0 = j * g.dil - g.pad_left;
          for (std::int64_t x = 0; x < g.ow; ++x) {
            const std::int64_t ix = x * g.stride + x0;
            if (ix >= 0 && ix < g.w) dst[ix] += src[x];
          }
        }
      }
}

/// y[N, Cout, oh, ow] = conv(x[N, Cin, H, W], w[Cout, Cin, kh, kw]).
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& s) {
  const auto n = x.dim(0);
  const ConvGeom g = conv_geom(x.dim(1), x.dim(2), x.dim(3), s);
  const auto cout = w.dim(0);
  Tensor<T> y({n, cout, g.oh, g.ow});
  std::vector<T> col(g.is_pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  CMapMat<T> wm(w.data.data(), cout, g.col_rows());
  for (std::int64_t b = 0; b < n; ++b) {
    const T* in = x.data.data() + b * g.c * g.h * g.w;
    const T* cols = in;
    if (!g.is_pointwise()) {
      im2col(in, g, col.data());
      cols = col.data();
    }
    MapMat<T> ym(y.data.data() + b * cout * g.oh * g.ow, cout, g.col_cols());
    ym.noalias() = wm * CMapMat<T>(cols, g.col_rows(), g.col_cols());
  }
  return y;
}

/// Accumulates dL/dw into gw and (if gx is non-null) dL/dx into gx.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& s, const Tensor<T>& gy, Tensor<T>* gx,
                     Tensor<T>* gw) {
  const auto n = x.dim(0);
  const ConvGeom g = conv_geom(x.dim(1), x.dim(2), x.dim(3), s);
  const auto cout = w.dim(0);
  std::vector<T> col(g.is_pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  std::vector<T> gcol(gx && !g.is_pointwise() ? col.size() : 0);
  CMapMat<T> wm(w.data.data(), cout, g.col_rows());
  for (std::int64_t b = 0; b < n; ++b) {
    const T* in = x.data.data() + b * g.c * g.h * g.w;
    CMapMat<T> gym(gy.data.data() + b * cout * g.oh * g.ow, cout, g.col_cols());
    if (gw) {
      const T* cols = in;
      if (!g.is_pointwise()) {
        im2col(in, g, col.data());
        cols = col.data();
      }
      MapMat<T> gwm(gw->data.data(), cout, g.col_rows());
      gwm.noalias() += gym * CMapMat<T>(cols, g.col_rows(), g.col_cols()).transpose();
    }
    if (gx) {
      T* gin = gx->data.data() + b * g.c * g.h * g.w;
      if (g.is_pointwise()) {
        MapMat<T> gxm(gin, g.col_rows(), g.col_cols());
        gxm.noalias() += wm.transpose() * gym;
      } else {
        MapMat<T> gcm(gcol.data(), g.col_rows(), g.col_cols());
        gcm.noalias() = wm.transpose() * gym;
        col2im(gcol.data(), g, gin);
      }
    }
  }
}

template <class T>
Tensor<T> avgpool_forward(const Tensor<T>& x, std::int64_t f) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % f || w % f) throw ShapeError("avgpool extent " + to_string(x.shape) + " not divisible by " + std::to_string(f));
  const auto oh = h / f, ow = w / f;
  Tensor<T> y({n, c, oh, ow});
  const T inv = T(1) / static_cast<T>(f * f);
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* src = x.data.data() + p * h * w;
    T* dst = y.data.data() + p * oh * ow;
    for (std::int64_t yy = 0; yy < oh; ++yy)
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        T s = 0;
        for (std::int64_t i = 0; i < f; ++i)
          for (std::int64_t j = 0; j < f; ++j) s += src[(yy * f + i) * w + xx * f + j];
        dst[yy * ow + xx] = s * inv;
      }
  }
  return y;
}

template <class T>
void avgpool_backward(const Tensor<T>& gy, std::int64_t f, Tensor<T>& gx) {
  const auto nc = gx.dim(0) * gx.dim(1), h = gx.dim(2), w = gx.dim(3);
  const auto oh = h / f, ow = w / f;
  const T inv = T(1) / static_cast<T>(f * f);
  for (std::int64_t p = 0; p < nc; ++p) {
    const T* src = gy.data.data() + p * oh * ow;
    T* dst = gx.data.data() + p * h * w;
    for (std::int64_t yy = 0; yy < h; ++yy)
      for (std::int64_t xx = 0; xx < w; ++xx) dst[yy * w + xx] += src[(yy / f) * ow + xx / f] * inv;
  }
}

template <class T>
Tensor<T> upsample_forward(const Tensor<T>& x, std::int64_t f) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({n, c, h * f, w * f});
  const auto oh = h * f, ow = w * f;
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* src = x.data.data() + p * h * w;
    T* dst = y.data.data() + p * oh * ow;
    for (std::int64_t yy = 0; yy < oh; ++yy)
      for (std::int64_t xx = 0; xx < ow; ++xx) dst[yy * ow + xx] = src[(yy / f) * w + xx / f];
  }
  return y;
}

template <class T>
void upsample_backward(const Tensor<T>& gy, std::int64_t f, Tensor<T>& gx) {
  const auto nc = gx.dim(0) * gx.dim(1), h = gx.dim(2), w = gx.dim(3);
  const auto oh = h * f, ow = w * f;
  for (std::int64_t p = 0; p < nc; ++p) {
    const T* src = gy.data.data() + p * oh * ow;
    T* dst = gx.data.data() + p * h * w;
    for (std::int64_t yy = 0; yy < oh; ++yy)
      for (std::int64_t xx = 0; xx < ow; ++xx) dst[(yy / f) * w + xx / f] += src[yy * ow + xx];
  }
}

}  // namespace dlscale::model::kernels
