// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "topopt/core/error.hpp"

namespace topopt::io {

using nlohmann::json;

// File layout, all integers little-endian:
//   magic "TOPOCTNR" | u32 version | u64 header_len | u32 header_crc32 | header JSON | data
// The header lists every block with dtype, shape, byte offset into the data
// region, byte length and CRC32. Blocks are contiguous in header order.
inline constexpr char kMagic[8] = {'T', 'O', 'P', 'O', 'C', 'T', 'N', 'R'};
inline constexpr std::uint32_t kContainerVersion = 1;

template <class T>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() { return "f32"; }
template <>
constexpr const char* dtype_name<double>() { return "f64"; }
template <>
constexpr const char* dtype_name<std::int32_t>() { return "i32"; }
template <>
constexpr const char* dtype_name<std::uint8_t>() { return "u8"; }

inline std::size_t dtype_size(const std::string& d) {
  if (d == "f32" || d == "i32") return 4;
  if (d == "f64") return 8;
  if (d == "u8") return 1;
  throw Error(ErrorKind::CorruptHeader, "unknown dtype '" + d + "'");
}

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  U u;
  std::memcpy(&u, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const unsigned char* p) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  T v;
  std::memcpy(&v, &u, sizeof(T));
  return v;
}

inline std::uint32_t crc32_of(const void* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace detail

/// One named array; bytes are little-endian.
struct Block {
  std::string name;
  std::string dtype;
  std::vector<std::int64_t> shape;
  std::vector<unsigned char> bytes;

  std::size_t count() const { return bytes.size() / dtype_size(dtype); }

  template <class T>
  static Block of(std::string name, std::vector<std::int64_t> shape, const std::vector<T>& values) {
    Block b{std::move(name), dtype_name<T>(), std::move(shape), {}};
    std::size_t expect = 1;
    for (auto s : b.shape) expect *= static_cast<std::size_t>(s);
    TOPOPT_REQUIRE(expect == values.size(), ErrorKind::ShapeMismatch, "block '" + b.name + "' shape/length mismatch");
    std::string tmp;
    tmp.reserve(values.size() * sizeof(T));
    for (const T& v : values) detail::put_le(tmp, v);
    b.bytes.assign(tmp.begin(), tmp.end());
    return b;
  }

  template <class T>
  std::vector<T> as() const {
    TOPOPT_REQUIRE(dtype == dtype_name<T>(), ErrorKind::CorruptHeader,
                   "block '" + name + "' is " + dtype + ", requested " + dtype_name<T>());
    std::vector<T> out(bytes.size() / sizeof(T));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::get_le<T>(bytes.data() + i * sizeof(T));
    return out;
  }

  friend bool operator==(const Block&, const Block&) = default;
};

struct Container {
  std::string kind;
  json meta = json::object();
  std::vector<Block> blocks;

  const Block& block(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return b;
    throw Error(ErrorKind::CorruptHeader, "container has no block '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return true;
    return false;
  }

  friend bool operator==(const Container&, const Container&) = default;
};

inline std::string serialize_container(const Container& c) {
  json blocks = json::array();
  std::uint64_t offset = 0;
  for (const auto& b : c.blocks) {
    TOPOPT_REQUIRE(b.bytes.size() % dtype_size(b.dtype) == 0, ErrorKind::InvalidArgument, "ragged block '" + b.name + "'");
    blocks.push_back({{"name", b.name},
                      {"dtype", b.dtype},
                      {"shape", b.shape},
                      {"offset", offset},
                      {"nbytes", b.bytes.size()},
                      {"crc32", detail::crc32_of(b.bytes.data(), b.bytes.size())}});
    offset += b.bytes.size();
  }
  const std::string header = json{{"kind", c.kind}, {"meta", c.meta}, {"blocks", blocks}}.dump();
  std::string out(kMagic, kMagic + 8);
  detail::put_le(out, kContainerVersion);
  detail::put_le(out, static_cast<std::uint64_t>(header.size()));
  detail::put_le(out, detail::crc32_of(header.data(), header.size()));
  out += header;
  out.reserve(out.size() + offset);
  for (const auto& b : c.blocks) out.append(reinterpret_cast<const char*>(b.bytes.data()), b.bytes.size());
  return out;
}

inline Container parse_container(const std::string& buf) {
  constexpr std::size_t kPre = 8 + 4 + 8 + 4;
  if (buf.size() < kPre) throw Error(ErrorKind::TruncatedFile, "container shorter than its preamble");
  if (std::memcmp(buf.data(), kMagic, 8) != 0) throw Error(ErrorKind::CorruptHeader, "bad container magic");
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const auto version = detail::get_le<std::uint32_t>(p + 8);
  if (version != kContainerVersion)
    throw Error(ErrorKind::VersionMismatch,
                "container version " + std::to_string(version) + ", expected " + std::to_string(kContainerVersion));
  const auto header_len = detail::get_le<std::uint64_t>(p + 12);
  const auto header_crc = detail::get_le<std::uint32_t>(p + 20);
  if (header_len > buf.size() - kPre) throw Error(ErrorKind::TruncatedFile, "container header truncated");
  const std::string header = buf.substr(kPre, header_len);
  if (detail::crc32_of(header.data(), header.size()) != header_crc)
    throw Error(ErrorKind::CorruptHeader, "container header checksum mismatch");

  Container c;
  json h, entries;
  try {
    h = json::parse(header);
    c.kind = h.at("kind").get<std::string>();
    c.meta = h.at("meta");
    entries = h.at("blocks");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::CorruptHeader, std::string("container header: ") + e.what());
  }
  const std::size_t data0 = kPre + header_len;
  const std::size_t avail = buf.size() - data0;
  std::uint64_t expect_offset = 0;
  for (const auto& jb : entries) {
    Block b;
    std::uint64_t offset = 0, nbytes = 0;
    std::uint32_t crc = 0;
    try {
      b.name = jb.at("name").get<std::string>();
      b.dtype = jb.at("dtype").get<std::string>();
      b.shape = jb.at("shape").get<std::vector<std::int64_t>>();
      offset = jb.at("offset").get<std::uint64_t>();
      nbytes = jb.at("nbytes").get<std::uint64_t>();
      crc = jb.at("crc32").get<std::uint32_t>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::CorruptHeader, std::string("container block entry: ") + e.what());
    }
    std::uint64_t elems = 1;
    for (auto s : b.shape) {
      if (s < 0) throw Error(ErrorKind::CorruptHeader, "negative extent in block '" + b.name + "'");
      elems *= static_cast<std::uint64_t>(s);
    }
    if (offset != expect_offset || elems * dtype_size(b.dtype) != nbytes)
      throw Error(ErrorKind::CorruptHeader, "inconsistent offset or size for block '" + b.name + "'");
    if (offset + nbytes > avail) throw Error(ErrorKind::TruncatedFile, "block '" + b.name + "' extends past end of file");
    b.bytes.assign(p + data0 + offset, p + data0 + offset + nbytes);
    if (detail::crc32_of(b.bytes.data(), b.bytes.size()) != crc)
      throw Error(ErrorKind::CorruptHeader, "checksum mismatch in block '" + b.name + "'");
    expect_offset = offset + nbytes;
    c.blocks.push_back(std::move(b));
  }
  if (expect_offset != avail) throw Error(ErrorKind::CorruptHeader, "trailing bytes after the last block");
  return c;
}

inline void write_container(const std::string& path, const Container& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for writing");
  const auto s = serialize_container(c);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw Error(ErrorKind::IoError, "write failed for '" + path + "'");
}

inline Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_container(buf);
}

}  // namespace topopt::io
