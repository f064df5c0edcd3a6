#pragma once

#include "spcg/coord.h"
#include "spcg/sparse_tensor.h"

#include <cstdint>
#include <memory>
#include <vector>

namespace spcg {

// Input/output row pairs for one kernel offset.
struct OffsetPairs {
  std::vector<int32_t> in;
  std::vector<int32_t> out;
};

// Rulebook of a sparse convolution: for kernel offset k, output row out[j]
// accumulates W_k applied to input row in[j]. Pairs inside one offset are
// sorted by output row.
struct KernelMap {
  std::vector<Coord3> offsets;
  std::vector<OffsetPairs> pairs;
  size_t in_rows = 0;
  size_t out_rows = 0;
  // Index of the zero offset when the map is an identity on it (submanifold).
  int identity_offset = -1;
};

// Offsets of a k^3 kernel, z varying fastest.
std::vector<Coord3> cube_offsets(int kernel_size);

KernelMap build_submanifold_map(const CoordSet& coords, int kernel_size);

// Strided 2^3 map from `children` onto `parents` (offset index = Morton rank).
// Children whose parent is absent contribute nothing.
KernelMap build_down2_map(const CoordSet& children, const CoordSet& parents);

// Transposed 2^3 map from `parents` onto `children`; children whose parent is
// absent receive only the bias.
KernelMap build_up2_map(const CoordSet& parents, const CoordSet& children);

// Pointwise map (1^3 kernel) between identical sets.
KernelMap build_identity_map(size_t rows);

}  // namespace spcg
