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

#include <atomic>
#include <chrono>
#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dlscale/core/bytes.hpp"
#include "dlscale/core/error.hpp"
#include "dlscale/core/rng.hpp"
#include "dlscale/data/staging.hpp"
#include "dlscale/transport/endpoint.hpp"

namespace dlscale::data {

/// FileTransfer payload: file id u32 | size u64 | bytes.
struct FileBlob {
  std::uint32_t file = 0;
  std::vector<std::uint8_t> bytes;
};

inline transport::Frame encode_file(const FileBlob& b) {
  transport::Frame f{transport::MsgType::file_transfer, 0, {}};
  ByteWriter w(f.payload);
  w.u32(b.file);
  w.u64(b.bytes.size());
  w.bytes(b.bytes);
  return f;
}

inline FileBlob decode_file(const transport::Frame& f) {
  if (f.type != transport::MsgType::file_transfer) throw ProtocolError("not a file transfer frame");
  ByteReader r(f.payload);
  FileBlob b;
  b.file = r.u32();
  const auto n = r.u64();
  if (n != r.remaining()) throw ProtocolError("file transfer size does not match payload");
  auto bytes = r.bytes(static_cast<std::size_t>(n));
  b.bytes.assign(bytes.begin(), bytes.end());
  return b;
}

/// Stand-in for the shared parallel filesystem: file contents are seeded
/// bytes and every read is counted.
class SharedStore {
 public:
  SharedStore(const DatasetCatalog& catalog, std::size_t payload_bytes, std::uint64_t seed)
      : payload_(payload_bytes), seed_(seed) {
    for (const auto& f : catalog.files()) reads_.emplace(f.id, std::make_unique<std::atomic<int>>(0));
  }

  std::vector<std::uint8_t> read(std::uint32_t file) {
    auto it = reads_.find(file);
    if (it == reads_.end()) throw ConfigError("file " + std::to_string(file) + " not in the store");
    it->second->fetch_add(1);
    return contents(file);
  }

  std::vector<std::uint8_t> contents(std::uint32_t file) const {
    Rng rng(mix_seed(seed_, file));
    std::vector<std::uint8_t> b(payload_);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng.below(256));
    return b;
  }

  int reads(std::uint32_t file) const { return reads_.at(file)->load(); }

  std::uint64_t total_reads() const {
    std::uint64_t n = 0;
    for (const auto& [id, c] : reads_) n += static_cast<std::uint64_t>(c->load());
    return n;
  }

 private:
  std::size_t payload_;
  std::uint64_t seed_;
  std::map<std::uint32_t, std::unique_ptr<std::atomic<int>>> reads_;
};

/// Files a node ends up holding, keyed by id.
using Holdings = std::map<std::uint32_t, std::vector<std::uint8_t>>;

/// One node's share of the plan: read its assigned files, forward copies in
/// file-id order, then collect the copies addressed to it.
inline Holdings execute_node(const StagingPlan& plan, SharedStore& store, transport::Endpoint& ep,
                             std::chrono::milliseconds timeout = std::chrono::seconds(60)) {
  const int me = ep.rank();
  Holdings held;
  for (const auto& [id, reader] : plan.reads)
    if (reader == me) held[id] = store.read(id);
  std::size_t expected = 0;
  for (const auto& t : plan.transfers) {
    if (t.from == me) ep.send(t.to, encode_file({t.file, held.at(t.file)}));
    if (t.to == me) ++expected;
  }
  const auto deadline = transport::Clock::now() + timeout;
  while (expected > 0) {
    const auto now = transport::Clock::now();
    if (now >= deadline)
      throw TransportError("node " + std::to_string(me) + " still waits for " + std::to_string(expected) + " files");
    auto f = ep.recv(std::chrono::duration_cast<std::chrono::microseconds>(deadline - now));
    if (!f) continue;
    auto blob = decode_file(*f);
    if (!held.emplace(blob.file, std::move(blob.bytes)).second)
      throw ProtocolError("node " + std::to_string(me) + " received file " + std::to_string(blob.file) + " twice");
    --expected;
  }
  return held;
}

struct StagingCheck {
  bool ok = true;
  std::vector<std::string> problems;  // missing samples, duplicate reads, corrupt copies
};

/// Each node must hold every file backing its assignment with the right
/// bytes, and every needed file must have been read exactly once.
inline StagingCheck verify_staging(const StagingPlan& plan, const SharedStore& store,
                                   std::span<const Holdings> holdings) {
  StagingCheck c;
  auto problem = [&](std::string s) {
    c.ok = false;
    c.problems.push_back(std::move(s));
  };
  std::set<std::uint32_t> needed;
  for (const auto& files : plan.needed_files) needed.insert(files.begin(), files.end());
  for (auto id : needed)
    if (store.reads(id) != 1)
      problem("file " + std::to_string(id) + " read " + std::to_string(store.reads(id)) + " times");
  for (std::size_t n = 0; n < plan.assignments.size(); ++n) {
    for (auto s : plan.assignments[n]) {
      const auto id = plan.catalog.files()[plan.catalog.file_index_of(s)].id;
      auto it = holdings[n].find(id);
      if (it == holdings[n].end())
        problem("node " + std::to_string(n) + " is missing sample " + std::to_string(s) + " (file " + std::to_string(id) + ")");
      else if (it->second != store.contents(id))
        problem("node " + std::to_string(n) + " holds a corrupt copy of file " + std::to_string(id));
    }
  }
  return c;
}

/// Runs the whole plan with one thread per node over `endpoints`.
inline std::vector<Holdings> execute_plan(const StagingPlan& plan, SharedStore& store,
                                          std::span<transport::Endpoint* const> endpoints) {
  if (static_cast<int>(endpoints.size()) != plan.nodes()) throw ConfigError("need one endpoint per node");
  std::vector<std::future<Holdings>> futs;
  for (auto* ep : endpoints)
    futs.push_back(std::async(std::launch::async, [&plan, &store, ep] { return execute_node(plan, store, *ep); }));
  std::vector<Holdings> out;
  for (auto& f : futs) out.push_back(f.get());
  return out;
}

}  // namespace dlscale::data
