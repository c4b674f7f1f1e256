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

#include <nlohmann/json.hpp>

#include "dlscale/data/staging.hpp"

namespace dlscale::data {

inline nlohmann::json to_json(const StagingPlan& p) {
  nlohmann::json j;
  j["nodes"] = p.nodes();
  j["files"] = nlohmann::json::array();
  for (const auto& f : p.catalog.files())
    j["files"].push_back({{"id", f.id}, {"bytes", f.bytes}, {"samples", f.samples}});
  j["reads"] = nlohmann::json::array();
  for (const auto& [id, node] : p.reads) j["reads"].push_back({{"file", id}, {"node", node}});
  j["transfers"] = nlohmann::json::array();
  for (const auto& t : p.transfers) j["transfers"].push_back({{"file", t.file}, {"from", t.from}, {"to", t.to}});
  j["assignments"] = p.assignments;
  return j;
}

inline nlohmann::json to_json(const StagingEstimate& e) {
  return {{"fs_read_bytes", e.fs_read_bytes},
          {"naive_read_bytes", e.naive_read_bytes},
          {"replication_factor", e.replication_factor},
          {"makespan_s", e.makespan_s},
          {"node_time_s", e.node_time_s}};
}

}  // namespace dlscale::data
