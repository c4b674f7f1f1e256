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

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dlscale/core/error.hpp"

namespace dlscale {

static_assert(std::endian::native == std::endian::little,
              "wire encoding assumes a little-endian host");

/// Appends little-endian scalars and length-prefixed strings to a buffer.
class ByteWriter {
 public:
  ByteWriter() = default;
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(&out) {}

  void u8(std::uint8_t v) { buf().push_back(v); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }

  void str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw ProtocolError("string too long for u16 length prefix");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }

  void bytes(std::span<const std::uint8_t> b) { buf().insert(buf().end(), b.begin(), b.end()); }

  void floats(std::span<const float> v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    buf().insert(buf().end(), p, p + v.size_bytes());
  }

  std::vector<std::uint8_t>& buf() { return out_ ? *out_ : own_; }
  std::vector<std::uint8_t> take() { return std::move(buf()); }

 private:
  template <class T>
  void put(T v) {
    auto& b = buf();
    const auto at = b.size();
    b.resize(at + sizeof(T));
    std::memcpy(b.data() + at, &v, sizeof(T));
  }

  std::vector<std::uint8_t>* out_ = nullptr;
  std::vector<std::uint8_t> own_;
};

/// Bounds-checked little-endian reader; throws ProtocolError on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }

  std::string str16() {
    const std::size_t n = u16();
    auto b = bytes(n);
    return {reinterpret_cast<const char*>(b.data()), b.size()};
  }

  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto out = in_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  void floats(std::span<float> out) {
    auto b = bytes(out.size_bytes());
    if (!b.empty()) std::memcpy(out.data(), b.data(), b.size());
  }

  std::size_t remaining() const { return in_.size() - pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw ProtocolError("truncated payload");
  }

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

/// 64-bit FNV-1a, used for parameter and payload fingerprints.
inline std::uint64_t fnv1a(std::span<const std::uint8_t> data,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (auto b : data) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class T>
std::uint64_t fnv1a_values(std::span<const T> v, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a({reinterpret_cast<const std::uint8_t*>(v.data()), v.size_bytes()}, h);
}

}  // namespace dlscale
