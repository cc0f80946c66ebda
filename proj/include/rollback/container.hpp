// Copyright 2026 The Rollback Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Versioned binary tensor container used for checkpoints and optimizer state.
// Byte layout (all integers little-endian) is documented in docs/FORMATS.md:
//
//   "RBTC"  u32 version  u32 meta_count  { str key, str value } * meta_count
//   u32 entry_count  { str name, u32 rank, u64 dims[rank], f32 values[] } * entry_count
//
// where str = u32 byte length followed by UTF-8 bytes.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "rollback/tensor.hpp"

namespace rollback {

inline constexpr std::array<char, 4> kContainerMagic{'R', 'B', 'T', 'C'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct ContainerEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Container {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<ContainerEntry> entries;

  const std::string* find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return &v;
    return nullptr;
  }
  const std::string& meta_at(const std::string& key) const {
    if (const auto* v = find_meta(key)) return *v;
    throw FormatError("missing metadata key '" + key + "'");
  }
  const ContainerEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
  const ContainerEntry& at(const std::string& name) const {
    if (const auto* e = find(name)) return *e;
    throw FormatError("missing tensor entry '" + name + "'");
  }
};

namespace io {

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { little(v); }
  void u64(std::uint64_t v) { little(v); }
  void i32(std::int32_t v) { little(static_cast<std::uint32_t>(v)); }
  void f32(float v) { little(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  template <typename U>
  void little(U v) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, sizeof(U));
  }
  std::ostream& os_;
};

/// Bounds-checked reader; every failure reports the byte offset.
class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::uint64_t offset() const { return offset_; }

  void bytes(void* p, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw FormatError("truncated input reading " + std::string(what) + " at offset " +
                        std::to_string(offset_ + static_cast<std::uint64_t>(is_.gcount())));
    }
    offset_ += n;
  }
  std::uint32_t u32(const char* what) { return little<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return little<std::uint64_t>(what); }
  std::int32_t i32(const char* what) { return static_cast<std::int32_t>(little<std::uint32_t>(what)); }
  float f32(const char* what) { return std::bit_cast<float>(little<std::uint32_t>(what)); }
  std::string str(const char* what, std::uint32_t limit = 1u << 20) {
    const auto at = offset_;
    const std::uint32_t n = u32(what);
    if (n > limit) {
      throw FormatError("implausible string length " + std::to_string(n) + " for " + what +
                        " at offset " + std::to_string(at));
    }
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof()) {
      throw FormatError("trailing bytes after offset " + std::to_string(offset_));
    }
  }

 private:
  template <typename U>
  U little(const char* what) {
    unsigned char buf[sizeof(U)];
    bytes(buf, sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& is_;
  std::uint64_t offset_ = 0;
};

}  // namespace io

inline void write_container(std::ostream& os, const Container& c) {
  io::Writer w(os);
  w.bytes(kContainerMagic.data(), kContainerMagic.size());
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(c.entries.size()));
  for (const auto& e : c.entries) {
    if (shape_numel(e.shape) != e.values.size()) {
      throw ShapeError("container entry '" + e.name + "' has shape " + shape_str(e.shape) +
                       " but " + std::to_string(e.values.size()) + " values");
    }
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.u64(d);
    for (float v : e.values) w.f32(v);
  }
  if (!os) throw Error("write failed");
}

inline Container read_container(std::istream& is) {
  io::Reader r(is);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kContainerMagic) throw FormatError("bad magic at offset 0: not a tensor container");
  const auto version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version) +
                      " at offset " + std::to_string(version_at) + " (expected " +
                      std::to_string(kContainerVersion) + ")");
  }
  Container c;
  const std::uint32_t nmeta = r.u32("meta count");
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str("meta key");
    std::string v = r.str("meta value");
    c.meta.emplace_back(std::move(k), std::move(v));
  }
  const std::uint32_t nentries = r.u32("entry count");
  for (std::uint32_t i = 0; i < nentries; ++i) {
    ContainerEntry e;
    e.name = r.str("entry name");
    const auto rank_at = r.offset();
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) {
      throw FormatError("implausible rank " + std::to_string(rank) + " at offset " +
                        std::to_string(rank_at));
    }
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim_at = r.offset();
      const std::uint64_t dim = r.u64("dimension");
      if (dim == 0 || dim > (1ull << 32)) {
        throw FormatError("invalid dimension " + std::to_string(dim) + " at offset " +
                          std::to_string(dim_at));
      }
      numel *= dim;
      if (numel > (1ull << 32)) throw FormatError("entry too large at offset " + std::to_string(dim_at));
      e.shape.push_back(static_cast<std::size_t>(dim));
    }
    e.values.resize(static_cast<std::size_t>(numel));
    for (auto& v : e.values) v = r.f32("tensor values");
    c.entries.push_back(std::move(e));
  }
  r.expect_end();
  return c;
}

inline void save_container(const std::string& path, const Container& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_container(os, c);
}

inline Container load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "' for reading");
  return read_container(is);
}

template <std::floating_point T>
ContainerEntry to_entry(std::string name, const Tensor<T>& t) {
  return {std::move(name), t.shape(), std::vector<float>(t.values().begin(), t.values().end())};
}

/// Copies an entry into `dst`, which must already have the entry's shape.
template <std::floating_point T>
void assign_entry(Tensor<T>& dst, const ContainerEntry& e) {
  if (dst.shape() != e.shape) {
    throw ShapeError("entry '" + e.name + "' has shape " + shape_str(e.shape) + ", expected " +
                     shape_str(dst.shape()));
  }
  auto v = dst.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(e.values[i]);
}

}  // namespace rollback
