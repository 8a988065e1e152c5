#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tjlab/error.hpp"

namespace tjlab::io {

// Little-endian byte sink. Every on-disk format in the library goes through
// this so the files are portable regardless of host byte order.
class ByteWriter {
 public:
  void bytes(std::span<const std::uint8_t> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }
  void magic(std::string_view m) { buf_.insert(buf_.end(), m.begin(), m.end()); }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  const std::vector<std::uint8_t>& data() const noexcept { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0) {
      throw FormatError(what_ + ": bad magic, expected \"" + std::string(m) + "\"");
    }
    pos_ += m.size();
  }
  std::uint8_t u8() {
    need(1, "u8");
    return data_[pos_++];
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2, "u16")); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4, "u32")); }
  std::uint64_t u64() { return get(8, "u64"); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    auto n = u32();
    need(n, "string");
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> bytes(std::size_t n, const char* field) {
    need(n, field);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  const std::string& what() const noexcept { return what_; }

 private:
  void need(std::size_t n, const char* field) const {
    if (remaining() < n) {
      throw FormatError(what_ + ": truncated while reading " + field + " (need " + std::to_string(n) +
                        " bytes, have " + std::to_string(remaining()) + ")");
    }
  }
  std::uint64_t get(int n, const char* field) {
    need(static_cast<std::size_t>(n), field);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

inline void write_text(const std::string& path, std::string_view text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

// FNV-1a, used for content hashes (split disjointness, config-hash file names).
inline std::uint64_t fnv1a(std::span<const std::uint8_t> data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (auto b : data) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s) {
  return fnv1a({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

}  // namespace tjlab::io
