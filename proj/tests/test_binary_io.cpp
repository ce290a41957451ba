#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "gist/binary_io.hpp"
#include "gist/error.hpp"

using namespace gist;

TEST(Fnv1a, ReferenceVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(ByteIo, RoundTripScalars) {
  ByteWriter w;
  w.put_magic("TEST", 8);
  w.put_u8(7);
  w.put_u32(0xdeadbeef);
  w.put_i32(-5);
  w.put_u64(0x0123456789abcdefULL);
  w.put_f64(-0.0);
  w.put_f64(std::numeric_limits<double>::infinity());
  w.put_matrix(Matrix{{1.5, 2.5}, {3.5, 4.5}});

  ByteReader r(w.bytes(), "test");
  r.expect_magic("TEST", 8);
  EXPECT_EQ(r.get_u8(), 7);
  EXPECT_EQ(r.get_u32(), 0xdeadbeefu);
  EXPECT_EQ(r.get_i32(), -5);
  EXPECT_EQ(r.get_u64(), 0x0123456789abcdefULL);
  const double z = r.get_f64();
  EXPECT_TRUE(std::signbit(z));
  EXPECT_TRUE(std::isinf(r.get_f64()));
  EXPECT_EQ(r.get_matrix(), (Matrix{{1.5, 2.5}, {3.5, 4.5}}));
  EXPECT_NO_THROW(r.expect_end());
}

TEST(ByteIo, LittleEndianLayout) {
  ByteWriter w;
  w.put_u32(0x01020304);
  ASSERT_EQ(w.bytes().size(), 4u);
  EXPECT_EQ(w.bytes()[0], 0x04);
  EXPECT_EQ(w.bytes()[3], 0x01);
}

TEST(ByteIo, TruncationIsFormatError) {
  ByteWriter w;
  w.put_u32(1);
  ByteReader r(w.bytes(), "short");
  EXPECT_THROW(r.get_u64(), FormatError);
}

TEST(ByteIo, WrongMagicIsFormatError) {
  ByteWriter w;
  w.put_magic("AAAA", 8);
  ByteReader r(w.bytes(), "magic");
  EXPECT_THROW(r.expect_magic("BBBB", 8), FormatError);
}

TEST(ByteIo, TrailingBytesAreFormatError) {
  ByteWriter w;
  w.put_u32(1);
  w.put_u8(0);
  ByteReader r(w.bytes(), "trailing");
  r.get_u32();
  EXPECT_THROW(r.expect_end(), FormatError);
}

TEST(Files, AtomicWriteAndRead) {
  const auto dir = std::filesystem::temp_directory_path() / "gist_binary_io_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "blob.bin";
  const std::vector<std::uint8_t> bytes{1, 2, 3, 250};
  write_file_atomic(path, bytes);
  EXPECT_EQ(read_file(path), bytes);
  write_text_atomic(dir / "t.txt", "hello\n");
  EXPECT_EQ(read_text_file(dir / "t.txt"), "hello\n");
  EXPECT_THROW(read_file(dir / "missing.bin"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Hex64, Formats) { EXPECT_EQ(hex64(0xabcULL), "0000000000000abc"); }
