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
#include <string>
#include <vector>

#include "dlscale/transport/frame.hpp"

namespace dlscale::control {

using transport::Frame;
using transport::MsgType;

/// Readiness payload: epoch u32 | name length u16 | name bytes.
struct Readiness {
  std::uint32_t epoch = 0;
  std::string name;

  friend bool operator==(const Readiness&, const Readiness&) = default;
};

/// Schedule payload: epoch u32 | count u16 | count x (length u16 | name bytes).
struct Schedule {
  std::uint32_t epoch = 0;
  std::vector<std::string> names;

  friend bool operator==(const Schedule&, const Schedule&) = default;
};

inline Frame encode(const Readiness& m) {
  Frame f{MsgType::readiness, 0, {}};
  ByteWriter w(f.payload);
  w.u32(m.epoch);
  w.str16(m.name);
  return f;
}

inline Frame encode(const Schedule& m) {
  if (m.names.size() > 0xFFFF) throw ProtocolError("schedule holds more than 65535 tensors");
  Frame f{MsgType::schedule, 0, {}};
  ByteWriter w(f.payload);
  w.u32(m.epoch);
  w.u16(static_cast<std::uint16_t>(m.names.size()));
  for (const auto& n : m.names) w.str16(n);
  return f;
}

inline Readiness decode_readiness(const Frame& f) {
  if (f.type != MsgType::readiness) throw ProtocolError("not a readiness frame");
  ByteReader r(f.payload);
  Readiness m;
  m.epoch = r.u32();
  m.name = r.str16();
  if (!r.done()) throw ProtocolError("trailing bytes in readiness frame");
  return m;
}

inline Schedule decode_schedule(const Frame& f) {
  if (f.type != MsgType::schedule) throw ProtocolError("not a schedule frame");
  ByteReader r(f.payload);
  Schedule m;
  m.epoch = r.u32();
  const std::size_t count = r.u16();
  m.names.reserve(count);
  for (std::size_t i = 0; i < count; ++i) m.names.push_back(r.str16());
  if (!r.done()) throw ProtocolError("trailing bytes in schedule frame");
  return m;
}

}  // namespace dlscale::control
