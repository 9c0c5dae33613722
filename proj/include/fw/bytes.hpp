#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "fw/error.hpp"

namespace fw {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian and written with memcpy");

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline constexpr std::uint32_t kFnv32Offset = 2166136261u;
inline constexpr std::uint32_t kFnv32Prime = 16777619u;
inline constexpr std::uint64_t kFnv64Offset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnv64Prime = 1099511628211ull;

constexpr std::uint32_t fnv1a32(std::string_view s, std::uint32_t h = kFnv32Offset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnv32Prime;
  }
  return h;
}

inline std::uint64_t fnv1a64(ByteView data, std::uint64_t h = kFnv64Offset) {
  for (std::uint8_t c : data) {
    h ^= c;
    h *= kFnv64Prime;
  }
  return h;
}

// Appends fixed-width little-endian values.
class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }

  void put_bytes(ByteView b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void put_tag(std::string_view magic) { out_.insert(out_.end(), magic.begin(), magic.end()); }

 private:
  Bytes& out_;
};

// Bounds-checked cursor; every overrun is a FormatError naming `what`.
class ByteReader {
 public:
  ByteReader(ByteView data, std::string what) : data_(data), what_(std::move(what)) {}

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  ByteView take(std::size_t n) {
    need(n);
    ByteView v = data_.subspan(pos_, n);
    pos_ += n;
    return v;
  }

  void expect_tag(std::string_view magic) {
    ByteView got = take(magic.size());
    if (std::memcmp(got.data(), magic.data(), magic.size()) != 0) {
      throw FormatError(what_ + ": bad magic, expected " + std::string(magic));
    }
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }
  ByteView rest() const { return data_.subspan(pos_); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
    }
  }

  ByteView data_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  Bytes out(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size))) {
    throw IoError("read failed: " + path);
  }
  return out;
}

inline void write_file(const std::string& path, ByteView data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace fw
