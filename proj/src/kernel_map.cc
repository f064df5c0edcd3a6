#include "spcg/kernel_map.h"

#include <stdexcept>

namespace spcg {

std::vector<Coord3> cube_offsets(int kernel_size)
{
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw std::invalid_argument("kernel size must be odd and positive");
  const int r = kernel_size / 2;
  std::vector<Coord3> out;
  out.reserve(size_t(kernel_size) * kernel_size * kernel_size);
  for (int dx = -r; dx <= r; ++dx)
    for (int dy = -r; dy <= r; ++dy)
      for (int dz = -r; dz <= r; ++dz)
        out.push_back({dx, dy, dz});
  return out;
}

KernelMap build_submanifold_map(const CoordSet& coords, int kernel_size)
{
  KernelMap map;
  map.offsets = cube_offsets(kernel_size);
  map.pairs.resize(map.offsets.size());
  map.in_rows = map.out_rows = coords.size();
  for (size_t k = 0; k < map.offsets.size(); ++k) {
    const Coord3 off = map.offsets[k];
    if (off == Coord3{0, 0, 0}) {
      map.identity_offset = int(k);
      continue;
    }
    auto& pairs = map.pairs[k];
    for (size_t u = 0; u < coords.size(); ++u) {
      int64_t v = coords.find(coords[u] + off);
      if (v >= 0) {
        pairs.in.push_back(int32_t(v));
        pairs.out.push_back(int32_t(u));
      }
    }
  }
  return map;
}

KernelMap build_down2_map(const CoordSet& children, const CoordSet& parents)
{
  KernelMap map;
  map.offsets.assign(child_offsets().begin(), child_offsets().end());
  map.pairs.resize(8);
  map.in_rows = children.size();
  map.out_rows = parents.size();
  // Iterating parents keeps each offset's pairs sorted by output row.
  for (size_t p = 0; p < parents.size(); ++p) {
    const Coord3 base = parents[p] * 2;
    for (int r = 0; r < 8; ++r) {
      int64_t c = children.find(base + offset_from_rank(r));
      if (c >= 0) {
        map.pairs[r].in.push_back(int32_t(c));
        map.pairs[r].out.push_back(int32_t(p));
      }
    }
  }
  return map;
}

KernelMap build_up2_map(const CoordSet& parents, const CoordSet& children)
{
  KernelMap map;
  map.offsets.assign(child_offsets().begin(), child_offsets().end());
  map.pairs.resize(8);
  map.in_rows = parents.size();
  map.out_rows = children.size();
  for (size_t c = 0; c < children.size(); ++c) {
    int64_t p = parents.find(parent_of(children[c]));
    if (p >= 0) {
      auto& pairs = map.pairs[offset_rank(child_offset(children[c]))];
      pairs.in.push_back(int32_t(p));
      pairs.out.push_back(int32_t(c));
    }
  }
  return map;
}

KernelMap build_identity_map(size_t rows)
{
  KernelMap map;
  map.offsets = {{0, 0, 0}};
  map.pairs.resize(1);
  map.in_rows = map.out_rows = rows;
  map.identity_offset = 0;
  return map;
}

}  // namespace spcg
