#include "spcg/byte_io.h"

#include <bit>
#include <cstring>

namespace spcg {

void Fnv1a64::update(std::span<const uint8_t> bytes)
{
  for (uint8_t b : bytes) {
    state_ ^= b;
    state_ *= 0x100000001b3ull;
  }
}

void Fnv1a64::update_u64(uint64_t v)
{
  uint8_t buf[8];
  for (int i = 0; i < 8; ++i)
    buf[i] = uint8_t(v >> (8 * i));
  update(buf);
}

void Fnv1a64::update_double(double v)
{
  update_u64(std::bit_cast<uint64_t>(v));
}

uint64_t fnv1a64(std::span<const uint8_t> bytes)
{
  Fnv1a64 h;
  h.update(bytes);
  return h.digest();
}

void ByteWriter::put_u16(uint16_t v)
{
  put_u8(uint8_t(v));
  put_u8(uint8_t(v >> 8));
}

void ByteWriter::put_u32(uint32_t v)
{
  for (int i = 0; i < 4; ++i)
    put_u8(uint8_t(v >> (8 * i)));
}

void ByteWriter::put_u64(uint64_t v)
{
  for (int i = 0; i < 8; ++i)
    put_u8(uint8_t(v >> (8 * i)));
}

void ByteWriter::put_f64(double v) { put_u64(std::bit_cast<uint64_t>(v)); }

void ByteWriter::put_varint(uint64_t v)
{
  while (v >= 0x80) {
    put_u8(uint8_t(v | 0x80));
    v >>= 7;
  }
  put_u8(uint8_t(v));
}

void ByteWriter::put_bytes(std::span<const uint8_t> bytes)
{
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

void ByteWriter::put_string(std::string_view s)
{
  put_varint(s.size());
  put_bytes({reinterpret_cast<const uint8_t*>(s.data()), s.size()});
}

void ByteReader::need(size_t n) const
{
  if (n > remaining())
    throw FormatError(
      "unexpected end of data at byte " + std::to_string(pos_));
}

uint8_t ByteReader::get_u8()
{
  need(1);
  return data_[pos_++];
}

uint16_t ByteReader::get_u16()
{
  need(2);
  uint16_t v = uint16_t(data_[pos_] | (data_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

uint32_t ByteReader::get_u32()
{
  need(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= uint32_t(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

uint64_t ByteReader::get_u64()
{
  need(8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= uint64_t(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::get_f64() { return std::bit_cast<double>(get_u64()); }

uint64_t ByteReader::get_varint()
{
  uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    uint8_t b = get_u8();
    v |= uint64_t(b & 0x7f) << shift;
    if (!(b & 0x80))
      return v;
  }
  throw FormatError("varint too long");
}

std::span<const uint8_t> ByteReader::get_bytes(size_t n)
{
  need(n);
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::string ByteReader::get_string()
{
  uint64_t n = get_varint();
  auto b = get_bytes(size_t(n));
  return std::string(b.begin(), b.end());
}

}  // namespace spcg
