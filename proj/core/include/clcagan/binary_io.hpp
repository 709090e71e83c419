#pragma once

// Little-endian primitives shared by the binary container formats.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace clcagan::io {

class ByteWriter {
 public:
  void magic(std::string_view four_cc);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::span<const std::uint8_t> data);
  void str(std::string_view s);  // u32 length prefix

  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  // Throws BadMagic on mismatch.
  void expect_magic(std::string_view four_cc);
  std::uint8_t u8();
  std::uint32_t u32();
  float f32();
  double f64();
  std::string str();
  std::span<const std::uint8_t> take(std::size_t n);

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// MissingFile / IoFailure on error.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

}  // namespace clcagan::io
