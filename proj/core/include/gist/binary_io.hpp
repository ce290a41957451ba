#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gist/matrix.hpp"

namespace gist {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes,
                    std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view text);

/// Little-endian byte sink, independent of host byte order.
class ByteWriter {
 public:
  void put_bytes(std::span<const std::uint8_t> bytes);
  void put_magic(std::string_view magic, std::size_t width);
  void put_u8(std::uint8_t v);
  void put_u32(std::uint32_t v);
  void put_i32(std::int32_t v);
  void put_u64(std::uint64_t v);
  void put_f64(double v);
  void put_f64s(std::span<const double> values);
  /// rows, cols, then row-major data.
  void put_matrix(const Matrix& m);

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked reader; running off the end raises FormatError.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what);

  void expect_magic(std::string_view magic, std::size_t width);
  std::uint8_t get_u8();
  std::uint32_t get_u32();
  std::int32_t get_i32();
  std::uint64_t get_u64();
  double get_f64();
  void get_f64s(std::span<double> out);
  Matrix get_matrix();

  std::size_t offset() const noexcept { return offset_; }
  std::size_t remaining() const noexcept { return bytes_.size() - offset_; }
  void expect_end() const;

 private:
  void need(std::size_t n) const;
  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t offset_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

std::string hex64(std::uint64_t v);

}  // namespace gist
