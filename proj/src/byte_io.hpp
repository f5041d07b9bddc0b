#pragma once

// Little-endian encoding helpers shared by the binary file formats.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <zlib.h>

#include "mixdim/error.hpp"
#include "mixdim/linalg.hpp"

namespace mixdim::detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32s(const Matrix& m) {
    for (const float f : m.data()) u32(std::bit_cast<std::uint32_t>(f));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return in_.size() - pos_; }

  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  Matrix f32s(std::size_t rows, std::size_t cols) {
    const std::size_t start = pos_;
    need(rows * cols * 4);
    std::vector<float> data(rows * cols);
    for (float& f : data) f = std::bit_cast<float>(u32());
    try {
      return Matrix(rows, cols, std::move(data));
    } catch (const ContractError&) {
      throw FormatError("non-finite tensor entry", start);
    }
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("truncated stream", pos_);
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

inline void append_crc(ByteWriter& w) { w.u32(crc32_of(w.buffer())); }

// Verifies the trailing CRC32 and returns the bytes it covers.
inline std::span<const std::uint8_t> checked_body(std::span<const std::uint8_t> bytes, std::size_t min_size) {
  if (bytes.size() < min_size + 4) throw FormatError("truncated stream", bytes.size());
  const std::size_t crc_at = bytes.size() - 4;
  ByteReader tail(bytes.subspan(crc_at));
  if (tail.u32() != crc32_of(bytes.first(crc_at))) throw FormatError("checksum mismatch", crc_at);
  return bytes.first(crc_at);
}

}  // namespace mixdim::detail
