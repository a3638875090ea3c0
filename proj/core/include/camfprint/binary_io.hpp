#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "camfprint/common.hpp"

namespace camfp::io {

/// Appends little-endian encodings to a byte buffer.
class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes_.insert(bytes_.end(), raw, raw + sizeof(T));
  }

  void put_bytes(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  void put_string(std::string_view s) {
    put_bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  }
  /// Zero-padded fixed-width field; throws if `s` does not fit.
  void put_fixed(std::string_view s, std::size_t width) {
    if (s.size() > width) throw StoreError("field '" + std::string(s) + "' exceeds " + std::to_string(width) + " bytes");
    put_string(s);
    bytes_.insert(bytes_.end(), width - s.size(), 0);
  }
  template <typename T>
  void put_array(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      put_bytes({reinterpret_cast<const std::uint8_t*>(values.data()), values.size_bytes()});
    } else {
      for (auto v : values) put(v);
    }
  }

  std::vector<std::uint8_t>& bytes() { return bytes_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian decoder over a byte span.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }

  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::string get_string(std::size_t n) {
    auto b = get_bytes(n);
    return {reinterpret_cast<const char*>(b.data()), b.size()};
  }
  /// Reads a zero-padded fixed-width field.
  std::string get_fixed(std::size_t width) {
    auto s = get_string(width);
    auto end = s.find('\0');
    if (end != std::string::npos) s.resize(end);
    return s;
  }
  template <typename T>
  void get_array(std::span<T> out) {
    if constexpr (std::endian::native == std::endian::little) {
      auto b = get_bytes(out.size_bytes());
      std::memcpy(out.data(), b.data(), b.size());
    } else {
      for (auto& v : out) v = get<T>();
    }
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void seek(std::size_t pos) {
    if (pos > bytes_.size()) throw StoreError(context_ + ": seek past end");
    pos_ = pos;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw StoreError(context_ + ": truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// observe either the old or the new file, never a partial one.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace camfp::io
