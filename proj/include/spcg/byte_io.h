#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spcg {

class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a.
class Fnv1a64 {
public:
  void update(std::span<const uint8_t> bytes);
  void update_u64(uint64_t v);
  void update_double(double v);
  uint64_t digest() const { return state_; }

private:
  uint64_t state_ = 0xcbf29ce484222325ull;
};

uint64_t fnv1a64(std::span<const uint8_t> bytes);

// Little-endian append-only writer.
class ByteWriter {
public:
  void put_u8(uint8_t v) { buf_.push_back(v); }
  void put_u16(uint16_t v);
  void put_u32(uint32_t v);
  void put_u64(uint64_t v);
  void put_f64(double v);
  void put_varint(uint64_t v);
  void put_bytes(std::span<const uint8_t> bytes);
  void put_string(std::string_view s);

  size_t size() const { return buf_.size(); }
  const std::vector<uint8_t>& bytes() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }

private:
  std::vector<uint8_t> buf_;
};

// Bounds-checked little-endian reader; throws FormatError on underrun.
class ByteReader {
public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}

  uint8_t get_u8();
  uint16_t get_u16();
  uint32_t get_u32();
  uint64_t get_u64();
  double get_f64();
  uint64_t get_varint();
  std::span<const uint8_t> get_bytes(size_t n);
  std::string get_string();

  size_t position() const { return pos_; }
  size_t remaining() const { return data_.size() - pos_; }

private:
  void need(size_t n) const;

  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

}  // namespace spcg
