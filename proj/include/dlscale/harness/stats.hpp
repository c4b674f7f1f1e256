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

namespace dlscale::harness {

/// One training step as seen by every rank.
struct StepRecord {
  std::int64_t step = 0;
  std::vector<double> samples_per_s;  // one entry per rank
  double wall_s = 0.0;
  double loss = 0.0;
};

/// Percentile with linear interpolation between closest ranks
/// (position q/100 * (n - 1) in the sorted series).
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw ConfigError("percentile of an empty series");
  if (q < 0.0 || q > 100.0) throw ConfigError("percentile must lie in [0, 100]");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct SustainedStats {
  double median = 0.0;  // samples/s per rank, median over steps
  double ci_low = 0.0;  // 16th percentile
  double ci_high = 0.0; // 84th percentile
  std::size_t steps = 0;
};

/// Per step the mean over ranks, then median and central 68% interval over
/// time.
inline SustainedStats sustained_stats(std::span<const double> per_step) {
  if (per_step.empty()) throw ConfigError("no step records");
  std::vector<double> v(per_step.begin(), per_step.end());
  return {percentile(v, 50.0), percentile(v, 16.0), percentile(v, 84.0), v.size()};
}

inline SustainedStats sustained_stats(std::span<const StepRecord> records) {
  std::vector<double> series;
  for (const auto& r : records) {
    if (r.samples_per_s.empty()) throw ConfigError("step record without rank samples");
    double s = 0.0;
    for (double x : r.samples_per_s) s += x;
    series.push_back(s / static_cast<double>(r.samples_per_s.size()));
  }
  return sustained_stats(series);
}

struct ScalingPoint {
  int workers = 0;
  SustainedStats per_rank;  // samples/s per rank
  double throughput = 0.0;  // aggregate samples/s = workers * median
  double efficiency = 0.0;
  double efficiency_low = 0.0;
  double efficiency_high = 0.0;
};

/// efficiency(P) = throughput(P) / (P * throughput(1)); requires a P = 1
/// baseline.
inline std::vector<ScalingPoint> weak_scaling(std::vector<ScalingPoint> points) {
  const auto base = std::find_if(points.begin(), points.end(), [](const auto& p) { return p.workers == 1; });
  if (base == points.end()) throw ConfigError("weak scaling needs a single-worker baseline");
  const double t1 = base->per_rank.median;
  if (!(t1 > 0.0)) throw ConfigError("baseline throughput must be positive");
  for (auto& p : points) {
    p.throughput = p.workers * p.per_rank.median;
    p.efficiency = p.throughput / (p.workers * t1);
    p.efficiency_low = p.per_rank.ci_low / t1;
    p.efficiency_high = p.per_rank.ci_high / t1;
  }
  return points;
}

}  // namespace dlscale::harness
