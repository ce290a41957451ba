#include "gist/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gist/error.hpp"

namespace gist {

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view text) {
  return fnv1a({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

void ByteWriter::put_bytes(std::span<const std::uint8_t> bytes) {
  bytes_.insert(bytes_.end(), bytes.begin(), bytes.end());
}

void ByteWriter::put_magic(std::string_view magic, std::size_t width) {
  require(magic.size() <= width, "magic longer than its field");
  for (std::size_t i = 0; i < width; ++i)
    bytes_.push_back(i < magic.size() ? static_cast<std::uint8_t>(magic[i]) : 0);
}

void ByteWriter::put_u8(std::uint8_t v) { bytes_.push_back(v); }

void ByteWriter::put_u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_i32(std::int32_t v) { put_u32(static_cast<std::uint32_t>(v)); }

void ByteWriter::put_u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_f64(double v) { put_u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::put_f64s(std::span<const double> values) {
  bytes_.reserve(bytes_.size() + 8 * values.size());
  for (double v : values) put_f64(v);
}

void ByteWriter::put_matrix(const Matrix& m) {
  put_u64(m.rows());
  put_u64(m.cols());
  put_f64s(m.data());
}

ByteReader::ByteReader(std::span<const std::uint8_t> bytes, std::string what)
    : bytes_(bytes), what_(std::move(what)) {}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n)
    throw FormatError(what_ + ": truncated at byte " + std::to_string(offset_));
}

void ByteReader::expect_magic(std::string_view magic, std::size_t width) {
  need(width);
  for (std::size_t i = 0; i < width; ++i) {
    const auto want = i < magic.size() ? static_cast<std::uint8_t>(magic[i]) : 0;
    if (bytes_[offset_ + i] != want)
      throw FormatError(what_ + ": bad magic, expected " + std::string(magic));
  }
  offset_ += width;
}

std::uint8_t ByteReader::get_u8() {
  need(1);
  return bytes_[offset_++];
}

std::uint32_t ByteReader::get_u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[offset_++]} << (8 * i);
  return v;
}

std::int32_t ByteReader::get_i32() { return static_cast<std::int32_t>(get_u32()); }

std::uint64_t ByteReader::get_u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[offset_++]} << (8 * i);
  return v;
}

double ByteReader::get_f64() { return std::bit_cast<double>(get_u64()); }

void ByteReader::get_f64s(std::span<double> out) {
  need(8 * out.size());
  for (auto& v : out) v = get_f64();
}

Matrix ByteReader::get_matrix() {
  const auto rows = get_u64();
  const auto cols = get_u64();
  if (cols != 0 && rows > remaining() / 8 / cols)
    throw FormatError(what_ + ": matrix block larger than the file");
  Matrix m(rows, cols);
  get_f64s(m.data());
  return m;
}

void ByteReader::expect_end() const {
  if (remaining() != 0)
    throw FormatError(what_ + ": " + std::to_string(remaining()) + " trailing bytes");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace gist
