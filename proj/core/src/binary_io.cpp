#include "clcagan/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "clcagan/error.hpp"

namespace clcagan::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(raw[sizeof(T) - 1 - i]);
  } else {
    buf.insert(buf.end(), raw, raw + sizeof(T));
  }
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint8_t raw[sizeof(T)];
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T); ++i) raw[i] = p[sizeof(T) - 1 - i];
  } else {
    std::memcpy(raw, p, sizeof(T));
  }
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

}  // namespace

void ByteWriter::magic(std::string_view four_cc) {
  buf_.insert(buf_.end(), four_cc.begin(), four_cc.end());
}
void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }
void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }
void ByteWriter::bytes(std::span<const std::uint8_t> data) {
  buf_.insert(buf_.end(), data.begin(), data.end());
}
void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw Error(ErrorCode::TruncatedPayload,
                "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", have " +
                    std::to_string(remaining()));
  }
}

void ByteReader::expect_magic(std::string_view four_cc) {
  if (remaining() < four_cc.size() ||
      std::memcmp(data_.data() + pos_, four_cc.data(), four_cc.size()) != 0) {
    throw Error(ErrorCode::BadMagic, "expected magic \"" + std::string(four_cc) + "\"");
  }
  pos_ += four_cc.size();
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  auto v = get_le<std::uint32_t>(data_.data() + pos_);
  pos_ += 4;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

double ByteReader::f64() {
  need(8);
  auto v = get_le<std::uint64_t>(data_.data() + pos_);
  pos_ += 8;
  return std::bit_cast<double>(v);
}

std::string ByteReader::str() {
  const auto n = u32();
  auto raw = take(n);
  return std::string(raw.begin(), raw.end());
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  need(n);
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorCode::MissingFile, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

}  // namespace clcagan::io
