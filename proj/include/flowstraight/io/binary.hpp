// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary containers shared by every on-disk format:
//
//   [4-byte magic][u32 version][payload ...][u32 CRC-32 of all preceding bytes]
//
// Readers validate the whole container (size, magic, CRC, version) before any
// field is decoded, so a load either yields a complete object or throws.

#pragma once

#include "flowstraight/core.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>

namespace flowstraight::io {

struct VersionError : FormatError {
  using FormatError::FormatError;
};

inline std::uint32_t crc32_of(std::span<const std::byte> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; chunk to stay within range on large files.
  std::size_t done = 0;
  while (done < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - done, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + done), static_cast<uInt>(chunk));
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class BinaryWriter {
 public:
  BinaryWriter(std::string_view magic, std::uint32_t version) {
    if (magic.size() != 4) throw std::logic_error("magic must be 4 bytes");
    raw(magic.data(), 4);
    u32(version);
  }

  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void f64s(const double* p, std::size_t n) { raw(p, n * sizeof(double)); }
  void vec(const Vector& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    f64s(v.data(), static_cast<std::size_t>(v.size()));
  }

  /// Appends the CRC and returns the finished container.
  std::string finish() {
    const std::uint32_t crc = crc32_of(std::as_bytes(std::span(buf_.data(), buf_.size())));
    u32(crc);
    return std::move(buf_);
  }

 private:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string buf_;
};

class BinaryReader {
 public:
  /// Validates the container and positions the cursor at the payload.
  BinaryReader(std::string_view bytes, std::string_view magic, std::uint32_t version,
               std::string_view what)
      : what_(what) {
    if (bytes.size() < 12)
      throw IntegrityError(std::string(what) + ": file truncated (" + std::to_string(bytes.size()) +
                           " bytes)");
    if (bytes.substr(0, 4) != magic)
      throw FormatError(std::string(what) + ": bad magic, expected \"" + std::string(magic) +
                        "\", found \"" + printable(bytes.substr(0, 4)) + "\"");
    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body, 4);
    const auto computed = crc32_of(std::as_bytes(std::span(bytes.data(), body)));
    if (stored != computed)
      throw IntegrityError(std::string(what) + ": CRC mismatch (file corrupted or truncated)");
    data_ = bytes.substr(0, body);
    pos_ = 4;
    const auto found = u32();
    if (found != version)
      throw VersionError(std::string(what) + ": unsupported format version " + std::to_string(found) +
                         " (expected " + std::to_string(version) + ")");
  }

  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void f64s(double* out, std::size_t n) {
    if (n > (data_.size() - pos_) / sizeof(double)) fail();
    std::memcpy(out, data_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  Vector vec() {
    const auto n = u64();
    if (n > (data_.size() - pos_) / sizeof(double)) fail();
    Vector v(static_cast<Eigen::Index>(n));
    f64s(v.data(), n);
    return v;
  }

  bool at_end() const { return pos_ == data_.size(); }
  void expect_end() const {
    if (!at_end()) throw IntegrityError(what_ + ": trailing bytes after payload");
  }

 private:
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) fail();
  }
  [[noreturn]] void fail() const { throw IntegrityError(what_ + ": payload shorter than declared"); }

  static std::string printable(std::string_view s) {
    std::string out;
    for (unsigned char c : s) {
      if (c >= 32 && c < 127) {
        out += static_cast<char>(c);
      } else {
        static constexpr char hex[] = "0123456789abcdef";
        out += "\\x";
        out += hex[c >> 4];
        out += hex[c & 0xF];
      }
    }
    return out;
  }

  std::string what_;
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

/// Writes to a sibling temporary and renames over the destination.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline std::uint64_t content_hash(std::string_view bytes) {
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace flowstraight::io
