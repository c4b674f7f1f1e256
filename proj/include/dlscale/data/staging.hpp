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
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "dlscale/core/error.hpp"
#include "dlscale/core/rng.hpp"

namespace dlscale::data {

struct FileInfo {
  std::uint32_t id = 0;
  std::uint64_t bytes = 0;
  std::uint32_t samples = 0;

  friend bool operator==(const FileInfo&, const FileInfo&) = default;
};

/// Files in catalog order; sample ids are global and contiguous per file.
class DatasetCatalog {
 public:
  DatasetCatalog() = default;

  explicit DatasetCatalog(std::vector<FileInfo> files) : files_(std::move(files)) {
    std::set<std::uint32_t> ids;
    first_sample_.reserve(files_.size());
    for (const auto& f : files_) {
      if (!ids.insert(f.id).second) throw ConfigError("duplicate file id " + std::to_string(f.id));
      if (f.bytes == 0 || f.samples == 0) throw ConfigError("file " + std::to_string(f.id) + " must have positive size");
      first_sample_.push_back(total_);
      total_ += f.samples;
    }
  }

  /// `count` files of `bytes` each holding `samples_per_file` samples, ids 0..count-1.
  static DatasetCatalog uniform(std::uint32_t count, std::uint64_t bytes, std::uint32_t samples_per_file = 1) {
    std::vector<FileInfo> files;
    for (std::uint32_t i = 0; i < count; ++i) files.push_back({i, bytes, samples_per_file});
    return DatasetCatalog(std::move(files));
  }

  const std::vector<FileInfo>& files() const { return files_; }
  std::uint64_t total_samples() const { return total_; }

  /// Index into files() of the file holding global sample `s`.
  std::size_t file_index_of(std::uint64_t s) const {
    if (s >= total_) throw ConfigError("sample " + std::to_string(s) + " is not in the catalog");
    auto it = std::upper_bound(first_sample_.begin(), first_sample_.end(), s);
    return static_cast<std::size_t>(it - first_sample_.begin()) - 1;
  }

  std::uint64_t first_sample(std::size_t file_index) const { return first_sample_[file_index]; }

 private:
  std::vector<FileInfo> files_;
  std::vector<std::uint64_t> first_sample_;
  std::uint64_t total_ = 0;
};

using Assignment = std::vector<std::vector<std::uint64_t>>;  // per node, ascending sample ids

/// Each node independently draws `per_node` distinct samples uniformly
/// (Floyd's algorithm); nodes may overlap. Deterministic in (seed, node).
inline Assignment assign_samples(const DatasetCatalog& catalog, int nodes, std::uint64_t per_node, std::uint64_t seed) {
  if (nodes < 1) throw ConfigError("node count must be >= 1");
  const std::uint64_t total = catalog.total_samples();
  if (per_node > total)
    throw ConfigError("per-node sample count " + std::to_string(per_node) + " exceeds catalog size " +
                      std::to_string(total));
  Assignment out(static_cast<std::size_t>(nodes));
  for (int n = 0; n < nodes; ++n) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(n)));
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(per_node * 2);
    for (std::uint64_t j = total - per_node; j < total; ++j) {
      const std::uint64_t t = rng.below(j + 1);
      if (!chosen.insert(t).second) chosen.insert(j);
    }
    auto& list = out[static_cast<std::size_t>(n)];
    list.assign(chosen.begin(), chosen.end());
    std::sort(list.begin(), list.end());
  }
  return out;
}

struct Transfer {
  std::uint32_t file = 0;
  int from = 0;
  int to = 0;

  friend bool operator==(const Transfer&, const Transfer&) = default;
};

/// Read-once staging plan: every needed file has one reader node that pulls
/// it from shared storage and forwards copies to the other requesters.
struct StagingPlan {
  DatasetCatalog catalog;
  Assignment assignments;
  std::map<std::uint32_t, int> reads;                    // file id -> reader node
  std::vector<Transfer> transfers;                        // ordered by file id, then destination
  std::vector<std::vector<std::uint32_t>> needed_files;  // per node, ascending file ids

  int nodes() const { return static_cast<int>(assignments.size()); }
};

/// Files are visited in ascending id order; each goes to the requesting node
/// with the fewest bytes assigned so far (lowest node id on ties).
inline StagingPlan plan_staging(const Assignment& assignments, const DatasetCatalog& catalog) {
  StagingPlan plan;
  plan.catalog = catalog;
  plan.assignments = assignments;
  const auto nodes = assignments.size();
  plan.needed_files.assign(nodes, {});

  std::map<std::uint32_t, std::vector<int>> requesters;  // ascending file id
  std::map<std::uint32_t, std::uint64_t> size_of;
  for (std::size_t n = 0; n < nodes; ++n) {
    std::set<std::uint32_t> files;
    for (auto s : assignments[n]) {
      if (s >= catalog.total_samples())
        throw ConfigError("node " + std::to_string(n) + " requests sample " + std::to_string(s) +
                          " absent from the catalog");
      const auto& f = catalog.files()[catalog.file_index_of(s)];
      files.insert(f.id);
      size_of[f.id] = f.bytes;
    }
    for (auto id : files) requesters[id].push_back(static_cast<int>(n));
    plan.needed_files[n].assign(files.begin(), files.end());
  }

  std::vector<std::uint64_t> load(nodes, 0);
  for (const auto& [id, who] : requesters) {
    int reader = who.front();
    for (int n : who)
      if (load[static_cast<std::size_t>(n)] < load[static_cast<std::size_t>(reader)]) reader = n;
    load[static_cast<std::size_t>(reader)] += size_of[id];
    plan.reads.emplace(id, reader);
    for (int n : who)
      if (n != reader) plan.transfers.push_back({id, reader, n});
  }
  return plan;
}

struct ReadModel {
  double per_thread_bytes_per_s = 1.79e9;
  int threads = 1;
  double node_cap_bytes_per_s = 0.0;  // 0 = uncapped

  /// Aggregate node read bandwidth: threads * per-thread, saturating at the cap.
  double node_bandwidth() const {
    if (threads < 1 || !(per_thread_bytes_per_s > 0.0)) throw ConfigError("read model needs positive threads/bandwidth");
    const double bw = threads * per_thread_bytes_per_s;
    return node_cap_bytes_per_s > 0.0 ? std::min(bw, node_cap_bytes_per_s) : bw;
  }
};

struct StagingEstimate {
  std::uint64_t fs_read_bytes = 0;    // planned shared-filesystem volume (each file once)
  std::uint64_t naive_read_bytes = 0; // every requester reads for itself
  double replication_factor = 0.0;    // naive / planned
  double makespan_s = 0.0;
  std::vector<double> node_time_s;
};

inline StagingEstimate estimate_staging(const StagingPlan& plan, const ReadModel& read, double link_bytes_per_s) {
  if (!(link_bytes_per_s > 0.0)) throw ConfigError("link bandwidth must be positive");
  const double read_bw = read.node_bandwidth();
  std::map<std::uint32_t, std::uint64_t> size_of;
  for (const auto& f : plan.catalog.files()) size_of[f.id] = f.bytes;

  StagingEstimate est;
  const auto nodes = static_cast<std::size_t>(plan.nodes());
  std::vector<std::uint64_t> read_bytes(nodes, 0), in_bytes(nodes, 0);
  for (const auto& [id, node] : plan.reads) {
    est.fs_read_bytes += size_of.at(id);
    read_bytes[static_cast<std::size_t>(node)] += size_of.at(id);
  }
  for (const auto& t : plan.transfers) in_bytes[static_cast<std::size_t>(t.to)] += size_of.at(t.file);
  for (const auto& files : plan.needed_files)
    for (auto id : files) est.naive_read_bytes += size_of.at(id);
  est.replication_factor =
      est.fs_read_bytes ? static_cast<double>(est.naive_read_bytes) / static_cast<double>(est.fs_read_bytes) : 1.0;
  est.node_time_s.resize(nodes);
  for (std::size_t n = 0; n < nodes; ++n) {
    est.node_time_s[n] = static_cast<double>(read_bytes[n]) / read_bw + static_cast<double>(in_bytes[n]) / link_bytes_per_s;
    est.makespan_s = std::max(est.makespan_s, est.node_time_s[n]);
  }
  return est;
}

}  // namespace dlscale::data
