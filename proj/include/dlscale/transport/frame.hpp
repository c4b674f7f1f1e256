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
#include <span>
#include <string>
#include <vector>

#include "dlscale/core/bytes.hpp"
#include "dlscale/core/error.hpp"

namespace dlscale::transport {

enum class MsgType : std::uint8_t { readiness = 0, schedule = 1, chunk_data = 2, file_transfer = 3, control = 4 };

inline constexpr std::uint8_t kMaxMsgType = 4;

/// Bytes in the length prefix.
inline constexpr std::size_t kLengthBytes = 4;
/// Bytes covered by `length` before the payload: msg_type + src_rank.
inline constexpr std::size_t kHeaderBytes = 1 + 4;

struct Frame {
  MsgType type = MsgType::control;
  std::uint32_t src_rank = 0;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Wire layout: length u32 LE (bytes after itself) | msg_type u8 | src_rank u32 LE | payload.
inline std::vector<std::uint8_t> encode(const Frame& f) {
  const std::size_t length = kHeaderBytes + f.payload.size();
  if (length > 0xFFFFFFFFu) throw ProtocolError("frame too large");
  std::vector<std::uint8_t> out;
  out.reserve(kLengthBytes + length);
  ByteWriter w(out);
  w.u32(static_cast<std::uint32_t>(length));
  w.u8(static_cast<std::uint8_t>(f.type));
  w.u32(f.src_rank);
  w.bytes(f.payload);
  return out;
}

inline MsgType checked_type(std::uint8_t raw) {
  if (raw > kMaxMsgType) throw ProtocolError("unknown msg_type " + std::to_string(raw));
  return static_cast<MsgType>(raw);
}

/// Decodes the bytes that follow the length prefix (`length` bytes).
inline Frame decode_body(std::span<const std::uint8_t> body) {
  if (body.size() < kHeaderBytes) throw ProtocolError("frame shorter than header");
  ByteReader r(body);
  Frame f;
  f.type = checked_type(r.u8());
  f.src_rank = r.u32();
  auto rest = r.bytes(r.remaining());
  f.payload.assign(rest.begin(), rest.end());
  return f;
}

/// Decodes exactly one complete frame, including its length prefix.
inline Frame decode(std::span<const std::uint8_t> wire) {
  ByteReader r(wire);
  const std::uint32_t length = r.u32();
  if (length != r.remaining())
    throw ProtocolError("frame length " + std::to_string(length) + " does not match " +
                        std::to_string(r.remaining()) + " available bytes");
  return decode_body(wire.subspan(kLengthBytes));
}

}  // namespace dlscale::transport
