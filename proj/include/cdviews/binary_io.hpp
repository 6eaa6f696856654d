#pragma once

// Little-endian byte packing shared by the params and embedding file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "cdviews/error.hpp"

namespace cdviews {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with native little-endian stores");

/// CRC-32C (Castagnoli).
std::uint32_t crc32c(std::string_view bytes);

class ByteWriter {
 public:
  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    buffer_.append(raw, sizeof(T));
  }
  void put_bytes(std::string_view bytes) { buffer_.append(bytes); }
  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    buffer_.append(s);
  }
  /// Appends the CRC-32C of everything written so far.
  void seal() { put(crc32c(buffer_)); }

  const std::string& bytes() const noexcept { return buffer_; }
  std::string release() { return std::move(buffer_); }

 private:
  std::string buffer_;
};

/// Bounds-checked reader; running past the end raises CorruptChecksum since a
/// short read means the file was truncated.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    require(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string_view get_bytes(std::size_t n) {
    require(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    return std::string(get_bytes(n));
  }
  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::CorruptChecksum, "unexpected end of data");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

/// Verifies and strips a trailing CRC-32C. Throws CorruptChecksum.
std::string_view verify_sealed(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
/// Write to a sibling temp file, then rename over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace cdviews
