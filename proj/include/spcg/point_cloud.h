#pragma once

#include "spcg/coord.h"

#include <cstddef>
#include <vector>

namespace spcg {

// Integer point cloud at bit precision N. Lossy position reconstructions may
// hold coincident points until canonicalize() is called.
struct PointCloud {
  std::vector<Coord3> points;
  int precision = 0;
  size_t original_count = 0;

  // Sorts into Morton order and drops duplicates; original_count is kept.
  void canonicalize();
  bool in_range() const;
};

}  // namespace spcg
