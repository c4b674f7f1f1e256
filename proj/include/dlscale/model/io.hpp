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
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "dlscale/core/bytes.hpp"
#include "dlscale/core/error.hpp"
#include "dlscale/core/tensor.hpp"
#include "dlscale/model/dataset.hpp"

namespace dlscale::model {

inline constexpr std::uint32_t kSceneMagic = 0x43534C44;       // "DLSC"
inline constexpr std::uint32_t kCheckpointMagic = 0x4B434C44;  // "DLCK"
inline constexpr std::uint32_t kFormatVersion = 1;

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot create " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + p.string());
}

inline std::vector<std::uint8_t> encode_scene(const SyntheticScene& s) {
  ByteWriter w;
  w.u32(kSceneMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(s.channels));
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  w.floats(s.input);
  w.bytes(s.labels);
  return w.take();
}

inline SyntheticScene decode_scene(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.u32() != kSceneMagic) throw ProtocolError("not a scene file");
  if (r.u32() != kFormatVersion) throw ProtocolError("unsupported scene version");
  SyntheticScene s;
  s.channels = static_cast<int>(r.u32());
  s.height = static_cast<int>(r.u32());
  s.width = static_cast<int>(r.u32());
  if (s.channels <= 0 || s.height <= 0 || s.width <= 0) throw ProtocolError("scene extents must be positive");
  const auto hw = static_cast<std::size_t>(s.height) * static_cast<std::size_t>(s.width);
  if (r.remaining() != hw * static_cast<std::size_t>(s.channels) * sizeof(float) + hw)
    throw ProtocolError("scene payload size does not match header");
  s.input.resize(hw * static_cast<std::size_t>(s.channels));
  r.floats(s.input);
  auto lab = r.bytes(hw);
  s.labels.assign(lab.begin(), lab.end());
  return s;
}

inline void write_scene(const std::filesystem::path& p, const SyntheticScene& s) { write_file(p, encode_scene(s)); }
inline SyntheticScene read_scene(const std::filesystem::path& p) { return decode_scene(read_file(p)); }

inline std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> params) {
  ByteWriter w;
  w.u32(kCheckpointMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& t : params) {
    w.str16(t.name());
    w.u32(static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
    w.floats(t.values());
  }
  return w.take();
}

inline std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.u32() != kCheckpointMagic) throw ProtocolError("not a checkpoint file");
  if (r.u32() != kFormatVersion) throw ProtocolError("unsupported checkpoint version");
  const auto n = r.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = r.str16();
    Shape shape(r.u32());
    for (auto& d : shape) d = static_cast<std::int64_t>(r.u64());
    const auto count = element_count(shape);
    if (count < 0 || static_cast<std::uint64_t>(count) * sizeof(float) > r.remaining())
      throw ProtocolError("checkpoint tensor '" + name + "' exceeds the payload");
    std::vector<float> v(static_cast<std::size_t>(count));
    r.floats(v);
    out.emplace_back(std::move(name), std::move(shape), std::move(v));
  }
  if (!r.done()) throw ProtocolError("trailing bytes after checkpoint");
  return out;
}

inline void write_checkpoint(const std::filesystem::path& p, std::span<const NamedTensor> params) {
  write_file(p, encode_checkpoint(params));
}
inline std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& p) {
  return decode_checkpoint(read_file(p));
}

}  // namespace dlscale::model
