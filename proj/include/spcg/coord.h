#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>

namespace spcg {

// Integer voxel coordinate at some scale.
struct Coord3 {
  int32_t x = 0;
  int32_t y = 0;
  int32_t z = 0;

  friend constexpr bool operator==(const Coord3&, const Coord3&) = default;

  friend constexpr Coord3 operator+(Coord3 a, Coord3 b)
  {
    return {a.x + b.x, a.y + b.y, a.z + b.z};
  }
  friend constexpr Coord3 operator-(Coord3 a, Coord3 b)
  {
    return {a.x - b.x, a.y - b.y, a.z - b.z};
  }
  friend constexpr Coord3 operator*(Coord3 a, int32_t s)
  {
    return {a.x * s, a.y * s, a.z * s};
  }
};

// Largest supported per-axis bit depth of a Morton key.
inline constexpr int kMortonBits = 21;

// floor(c / 2) per component; arithmetic shift rounds toward -inf.
constexpr Coord3 parent_of(Coord3 c) { return {c.x >> 1, c.y >> 1, c.z >> 1}; }

// (x mod 2, y mod 2, z mod 2).
constexpr Coord3 child_offset(Coord3 c) { return {c.x & 1, c.y & 1, c.z & 1}; }

// Rank of a child offset in {0,1}^3 with z as the least significant bit.
constexpr int offset_rank(Coord3 o) { return (o.x << 2) | (o.y << 1) | o.z; }

constexpr Coord3 offset_from_rank(int rank)
{
  return {(rank >> 2) & 1, (rank >> 1) & 1, rank & 1};
}

namespace detail {
constexpr std::array<Coord3, 8> make_child_offsets()
{
  std::array<Coord3, 8> out{};
  for (int r = 0; r < 8; ++r)
    out[r] = offset_from_rank(r);
  return out;
}
inline constexpr std::array<Coord3, 8> kChildOffsets = make_child_offsets();
}  // namespace detail

// The eight child offsets in Morton rank order.
constexpr const std::array<Coord3, 8>& child_offsets()
{
  return detail::kChildOffsets;
}

constexpr bool in_morton_range(Coord3 c)
{
  constexpr int32_t lim = int32_t(1) << kMortonBits;
  return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < lim && c.y < lim
    && c.z < lim;
}

// Interleaves bits as ...x1y1z1x0y0z0; callers must ensure in_morton_range.
uint64_t morton_encode(Coord3 c);
Coord3 morton_decode(uint64_t code);

struct Coord3Hash {
  size_t operator()(const Coord3& c) const noexcept
  {
    uint64_t h = uint64_t(uint32_t(c.x)) * 0x9E3779B97F4A7C15ull;
    h ^= uint64_t(uint32_t(c.y)) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= uint64_t(uint32_t(c.z)) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return size_t(h);
  }
};

}  // namespace spcg
