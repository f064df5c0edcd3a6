#pragma once

#include "spcg/coord.h"
#include "spcg/matrix.h"

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

namespace spcg {

struct KernelMap;

// Immutable, Morton-ordered set of unique voxel coordinates with a hash
// index. Submanifold kernel maps are built lazily and cached per kernel
// size, so every convolution over the same set shares one neighbour table.
class CoordSet {
public:
  // Sorts into Morton order. Throws std::invalid_argument on duplicates or
  // coordinates outside the Morton range.
  static std::shared_ptr<const CoordSet> from_coords(std::vector<Coord3> coords);

  // Same as from_coords but silently drops duplicates.
  static std::shared_ptr<const CoordSet> unique_of(std::vector<Coord3> coords);

  size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }
  std::span<const Coord3> coords() const { return coords_; }
  const Coord3& operator[](size_t i) const { return coords_[i]; }
  uint64_t key(size_t i) const { return keys_[i]; }

  // Row index of c, or -1.
  int64_t find(Coord3 c) const;
  bool contains(Coord3 c) const { return find(c) >= 0; }

  // Neighbour table for an odd kernel edge length k (offsets in [-k/2,k/2]^3).
  std::shared_ptr<const KernelMap> submanifold_map(int kernel_size) const;

  CoordSet(std::vector<Coord3> coords, std::vector<uint64_t> keys);

private:
  std::vector<Coord3> coords_;
  std::vector<uint64_t> keys_;
  std::vector<int32_t> table_;
  uint64_t mask_ = 0;

  mutable std::mutex cache_mutex_;
  mutable std::map<int, std::shared_ptr<const KernelMap>> cache_;
};

using CoordSetPtr = std::shared_ptr<const CoordSet>;

enum class OccupancyRole : uint8_t { POV, MPPOV };

// Coordinates at one scale plus a fixed-width feature row per coordinate.
class SparseTensor {
public:
  SparseTensor(int scale, CoordSetPtr coords, Matrix features,
               OccupancyRole role = OccupancyRole::POV);

  // Geometry-only tensor carrying the constant scalar feature 1.
  static SparseTensor geometry(int scale, CoordSetPtr coords,
                               OccupancyRole role = OccupancyRole::POV);
  static SparseTensor geometry(int scale, std::vector<Coord3> coords,
                               OccupancyRole role = OccupancyRole::POV);

  int scale() const { return scale_; }
  const CoordSet& coords() const { return *coords_; }
  const CoordSetPtr& coord_set() const { return coords_; }
  const Matrix& features() const { return features_; }
  size_t size() const { return coords_->size(); }
  int channels() const { return int(features_.cols()); }
  OccupancyRole role() const { return role_; }

private:
  int scale_;
  CoordSetPtr coords_;
  Matrix features_;
  OccupancyRole role_;
};

enum class GroupingVariant : uint8_t { OneStage, ThreeStage, EightStage };

// Partition of the eight child offsets into sequentially processed stages.
class GroupingArrangement {
public:
  static GroupingArrangement make(GroupingVariant variant);

  GroupingVariant variant() const { return variant_; }
  int stage_count() const { return int(stages_.size()); }
  // Offsets of one stage (0-based), in Morton rank order.
  const std::vector<Coord3>& stage(int index) const { return stages_[index]; }
  // 0-based stage index of a child offset.
  int stage_index(Coord3 offset) const { return stage_of_rank_[offset_rank(offset)]; }

private:
  GroupingVariant variant_ = GroupingVariant::OneStage;
  std::vector<std::vector<Coord3>> stages_;
  std::array<int, 8> stage_of_rank_{};
};

// 1-based labels: group is the Morton rank + 1, stage the processing step.
struct GroupAssignment {
  int group;
  int stage;
};

GroupAssignment group_of(Coord3 offset, const GroupingArrangement& arr);

SparseTensor voxel_downscale_geom(const SparseTensor& t);
SparseTensor voxel_upscale_geom(const SparseTensor& t);

// Restricts t to `keep`; every kept coordinate must be present in t.
SparseTensor prune(const SparseTensor& t, std::span<const Coord3> keep);

// The 8 children of every coordinate, in Morton order.
CoordSetPtr children_of(const CoordSet& parents);
CoordSetPtr parents_of(const CoordSet& children);

}  // namespace spcg
