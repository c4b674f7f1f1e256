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

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dlscale/core/error.hpp"
#include "dlscale/core/rng.hpp"
#include "dlscale/model/tensor.hpp"

namespace dlscale::model {

enum Label : std::uint8_t { kBackground = 0, kRiver = 1, kCyclone = 2 };

struct SceneConfig {
  int channels = 16;
  int height = 64;
  int width = 48;
  std::array<double, 3> frequencies{0.982, 0.017, 0.001};  // BG, AR, TC
  double noise_std = 1.0;
  double river_amplitude = 1.5;
  double cyclone_amplitude = 2.0;
  int cyclone_radius = 2;
  int river_width = 2;
  int river_min_length = 12;
  int river_max_length = 28;
  int river_channels = 4;    // channels [0, river_channels)
  int cyclone_channels = 4;  // the next cyclone_channels channels

  void validate() const {
    if (channels <= 0 || height <= 0 || width <= 0) throw ConfigError("scene extents must be positive");
    double sum = 0.0;
    for (double f : frequencies) {
      if (!(f >= 0.0) || !std::isfinite(f)) throw ConfigError("class frequencies must be non-negative");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("class frequencies must sum to 1");
    if (frequencies[1] + frequencies[2] > 0.5)
      throw ConfigError("infeasible frequency request: foreground above half the image");
    if (cyclone_radius < 0 || 2 * cyclone_radius + 1 > std::min(height, width))
      throw ConfigError("infeasible frequency request: cyclone blob larger than the image");
    if (frequencies[1] > 0.0 && (river_width <= 0 || river_min_length <= 0 || river_max_length < river_min_length))
      throw ConfigError("river streak geometry must be positive");
    if (river_channels < 0 || cyclone_channels < 0 || river_channels + cyclone_channels > channels)
      throw ConfigError("signal channels exceed the channel count");
    if (noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
  }

  std::int64_t pixels() const { return std::int64_t{height} * width; }
};

struct SyntheticScene {
  int channels = 0, height = 0, width = 0;
  std::vector<float> input;           // [C, H, W]
  std::vector<std::uint8_t> labels;   // [H, W]
};

namespace detail {

inline std::int64_t paint_disk(SyntheticScene& s, int cy, int cx, int r, std::vector<float>& profile) {
  std::int64_t painted = 0;
  for (int y = cy - r - 1; y <= cy + r + 1; ++y)
    for (int x = cx - r - 1; x <= cx + r + 1; ++x) {
      if (y < 0 || x < 0 || y >= s.height || x >= s.width) continue;
      const double d2 = static_cast<double>((y - cy) * (y - cy) + (x - cx) * (x - cx));
      const auto i = static_cast<std::size_t>(y) * static_cast<std::size_t>(s.width) + static_cast<std::size_t>(x);
      const double sigma = std::max(r, 1);
      profile[i] = std::max(profile[i], static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma))));
      if (d2 <= r * r && s.labels[i] != kCyclone) {
        s.labels[i] = kCyclone;
        ++painted;
      }
    }
  return painted;
}

/// Straight streak of the given width; never overwrites cyclone pixels.
inline std::int64_t paint_streak(SyntheticScene& s, Rng& rng, const SceneConfig& c, std::vector<float>& mask) {
  const double angle = rng.uniform(0.0, 3.141592653589793);
  const double len = static_cast<double>(c.river_min_length) +
                     static_cast<double>(rng.below(static_cast<std::uint64_t>(c.river_max_length - c.river_min_length + 1)));
  const double y0 = rng.uniform(0.0, s.height), x0 = rng.uniform(0.0, s.width);
  const double dy = std::sin(angle), dx = std::cos(angle);
  const double half = 0.5 * c.river_width;
  std::int64_t painted = 0;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const double py = y + 0.5 - y0, px = x + 0.5 - x0;
      const double along = py * dy + px * dx;
      const double across = std::abs(-py * dx + px * dy);
      if (along < -0.5 * len || along > 0.5 * len || across > half) continue;
      const auto i = static_cast<std::size_t>(y) * static_cast<std::size_t>(s.width) + static_cast<std::size_t>(x);
      if (s.labels[i] != kBackground) continue;
      s.labels[i] = kRiver;
      mask[i] = 1.0f;
      ++painted;
    }
  return painted;
}

}  // namespace detail

/// Noise fields with injected cyclone blobs and river streaks. Object counts
/// follow a running pixel deficit so aggregate label frequencies track the
/// request across the whole set. Scene i is drawn from mix_seed(seed, i).
inline std::vector<SyntheticScene> gen_dataset(const SceneConfig& c, std::size_t count, std::uint64_t seed) {
  c.validate();
  std::vector<SyntheticScene> out;
  out.reserve(count);
  const auto hw = static_cast<std::size_t>(c.pixels());
  const double disk_area = [&] {
    int n = 0;
    for (int y = -c.cyclone_radius; y <= c.cyclone_radius; ++y)
      for (int x = -c.cyclone_radius; x <= c.cyclone_radius; ++x) n += x * x + y * y <= c.cyclone_radius * c.cyclone_radius;
    return static_cast<double>(n);
  }();
  double want_tc = 0.0, want_ar = 0.0;
  std::int64_t have_tc = 0, have_ar = 0;
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng(mix_seed(seed, k));
    SyntheticScene s{c.channels, c.height, c.width, std::vector<float>(hw * static_cast<std::size_t>(c.channels)),
                     std::vector<std::uint8_t>(hw, kBackground)};
    for (auto& v : s.input) v = static_cast<float>(c.noise_std * rng.normal());
    want_tc += c.frequencies[2] * static_cast<double>(hw);
    want_ar += c.frequencies[1] * static_cast<double>(hw);

    std::vector<float> blob(hw, 0.0f), streak(hw, 0.0f);
    for (int tries = 0; c.frequencies[2] > 0.0 && want_tc - static_cast<double>(have_tc) >= 0.5 * disk_area && tries < 64; ++tries) {
      const int r = c.cyclone_radius;
      const int cy = r + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.height - 2 * r)));
      const int cx = r + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.width - 2 * r)));
      have_tc += detail::paint_disk(s, cy, cx, r, blob);
    }
    for (int tries = 0; c.frequencies[1] > 0.0 && want_ar - static_cast<double>(have_ar) > 0.0 && tries < 256; ++tries)
      have_ar += detail::paint_streak(s, rng, c, streak);

    for (int ch = 0; ch < c.river_channels; ++ch) {
      float* p = s.input.data() + static_cast<std::size_t>(ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] += static_cast<float>(c.river_amplitude) * streak[i];
    }
    for (int ch = c.river_channels; ch < c.river_channels + c.cyclone_channels; ++ch) {
      float* p = s.input.data() + static_cast<std::size_t>(ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] += static_cast<float>(c.cyclone_amplitude) * blob[i];
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Per-class label frequencies over a set of scenes.
inline std::array<double, 3> label_frequencies(std::span<const SyntheticScene> scenes) {
  std::array<double, 3> f{};
  double total = 0.0;
  for (const auto& s : scenes) {
    for (auto y : s.labels) f[y] += 1.0;
    total += static_cast<double>(s.labels.size());
  }
  if (total > 0.0)
    for (auto& v : f) v /= total;
  return f;
}

/// Stacks the selected scenes into an [N, C, H, W] batch and [N, H, W] labels.
inline std::pair<Tensor<float>, std::vector<std::uint8_t>> make_batch(std::span<const SyntheticScene> scenes,
                                                                      std::span<const std::uint64_t> indices) {
  if (indices.empty()) throw ShapeError("empty batch");
  for (auto i : indices)
    if (i >= scenes.size()) throw ShapeError("scene index " + std::to_string(i) + " out of range");
  const auto& s0 = scenes[static_cast<std::size_t>(indices[0])];
  Tensor<float> x({static_cast<std::int64_t>(indices.size()), s0.channels, s0.height, s0.width});
  std::vector<std::uint8_t> y;
  y.reserve(indices.size() * s0.labels.size());
  std::size_t off = 0;
  for (auto i : indices) {
    const auto& s = scenes[static_cast<std::size_t>(i)];
    if (s.channels != s0.channels || s.height != s0.height || s.width != s0.width)
      throw ShapeError("scenes in a batch must share extents");
    std::copy(s.input.begin(), s.input.end(), x.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += s.input.size();
    y.insert(y.end(), s.labels.begin(), s.labels.end());
  }
  return {std::move(x), std::move(y)};
}

}  // namespace dlscale::model
