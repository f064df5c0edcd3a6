#include "spcg/coord.h"

namespace spcg {

namespace {

uint64_t spread_bits(uint64_t v)
{
  v &= 0x1fffff;
  v = (v | v << 32) & 0x1f00000000ffffull;
  v = (v | v << 16) & 0x1f0000ff0000ffull;
  v = (v | v << 8) & 0x100f00f00f00f00full;
  v = (v | v << 4) & 0x10c30c30c30c30c3ull;
  v = (v | v << 2) & 0x1249249249249249ull;
  return v;
}

uint64_t compact_bits(uint64_t v)
{
  v &= 0x1249249249249249ull;
  v = (v ^ (v >> 2)) & 0x10c30c30c30c30c3ull;
  v = (v ^ (v >> 4)) & 0x100f00f00f00f00full;
  v = (v ^ (v >> 8)) & 0x1f0000ff0000ffull;
  v = (v ^ (v >> 16)) & 0x1f00000000ffffull;
  v = (v ^ (v >> 32)) & 0x1fffff;
  return v;
}

}  // namespace

uint64_t morton_encode(Coord3 c)
{
  return (spread_bits(uint64_t(c.x)) << 2) | (spread_bits(uint64_t(c.y)) << 1)
    | spread_bits(uint64_t(c.z));
}

Coord3 morton_decode(uint64_t code)
{
  return {int32_t(compact_bits(code >> 2)), int32_t(compact_bits(code >> 1)),
          int32_t(compact_bits(code))};
}

}  // namespace spcg
