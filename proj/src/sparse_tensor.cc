#include "spcg/sparse_tensor.h"

#include "spcg/kernel_map.h"

#include <algorithm>
#include <bit>
#include <numeric>
#include <string>

namespace spcg {

namespace {

uint64_t mix_key(uint64_t k)
{
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdull;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ull;
  k ^= k >> 33;
  return k;
}

// Sorts by Morton key; returns (coords, keys) and whether duplicates existed.
std::pair<std::vector<Coord3>, std::vector<uint64_t>>
sort_morton(std::vector<Coord3> coords, bool drop_duplicates)
{
  std::vector<uint64_t> keys(coords.size());
  for (size_t i = 0; i < coords.size(); ++i) {
    if (!in_morton_range(coords[i]))
      throw std::invalid_argument(
        "coordinate (" + std::to_string(coords[i].x) + ","
        + std::to_string(coords[i].y) + "," + std::to_string(coords[i].z)
        + ") outside the representable range");
    keys[i] = morton_encode(coords[i]);
  }
  std::sort(keys.begin(), keys.end());
  auto last = std::unique(keys.begin(), keys.end());
  if (last != keys.end() && !drop_duplicates)
    throw std::invalid_argument("duplicate coordinates in sparse tensor");
  keys.erase(last, keys.end());

  std::vector<Coord3> sorted(keys.size());
  for (size_t i = 0; i < keys.size(); ++i)
    sorted[i] = morton_decode(keys[i]);
  return {std::move(sorted), std::move(keys)};
}

}  // namespace

CoordSet::CoordSet(std::vector<Coord3> coords, std::vector<uint64_t> keys)
  : coords_(std::move(coords)), keys_(std::move(keys))
{
  size_t cap = 16;
  while (cap < 2 * coords_.size())
    cap <<= 1;
  table_.assign(cap, -1);
  mask_ = cap - 1;
  for (size_t i = 0; i < keys_.size(); ++i) {
    uint64_t slot = mix_key(keys_[i]) & mask_;
    while (table_[slot] >= 0)
      slot = (slot + 1) & mask_;
    table_[slot] = int32_t(i);
  }
}

CoordSetPtr CoordSet::from_coords(std::vector<Coord3> coords)
{
  auto [sorted, keys] = sort_morton(std::move(coords), false);
  return std::make_shared<const CoordSet>(std::move(sorted), std::move(keys));
}

CoordSetPtr CoordSet::unique_of(std::vector<Coord3> coords)
{
  auto [sorted, keys] = sort_morton(std::move(coords), true);
  return std::make_shared<const CoordSet>(std::move(sorted), std::move(keys));
}

int64_t CoordSet::find(Coord3 c) const
{
  if (!in_morton_range(c))
    return -1;
  uint64_t key = morton_encode(c);
  uint64_t slot = mix_key(key) & mask_;
  for (;;) {
    int32_t idx = table_[slot];
    if (idx < 0)
      return -1;
    if (keys_[idx] == key)
      return idx;
    slot = (slot + 1) & mask_;
  }
}

std::shared_ptr<const KernelMap> CoordSet::submanifold_map(int kernel_size) const
{
  std::lock_guard lock(cache_mutex_);
  auto it = cache_.find(kernel_size);
  if (it != cache_.end())
    return it->second;
  auto map = std::make_shared<const KernelMap>(
    build_submanifold_map(*this, kernel_size));
  cache_.emplace(kernel_size, map);
  return map;
}

SparseTensor::SparseTensor(int scale, CoordSetPtr coords, Matrix features,
                           OccupancyRole role)
  : scale_(scale), coords_(std::move(coords)), features_(std::move(features)),
    role_(role)
{
  if (scale_ < 0 || scale_ > kMortonBits)
    throw std::invalid_argument("sparse tensor scale out of range");
  if (!coords_)
    throw std::invalid_argument("sparse tensor without coordinates");
  if (size_t(features_.rows()) != coords_->size())
    throw std::invalid_argument("feature rows do not match coordinate count");
  if (features_.cols() < 1)
    throw std::invalid_argument("feature width must be at least 1");
  const int32_t lim = int32_t(1) << scale_;
  for (const Coord3& c : coords_->coords()) {
    if (c.x >= lim || c.y >= lim || c.z >= lim)
      throw std::invalid_argument(
        "coordinate outside [0, 2^" + std::to_string(scale_) + ")");
  }
}

SparseTensor SparseTensor::geometry(int scale, CoordSetPtr coords,
                                    OccupancyRole role)
{
  Matrix ones = Matrix::Ones(Eigen::Index(coords->size()), 1);
  return SparseTensor(scale, std::move(coords), std::move(ones), role);
}

SparseTensor SparseTensor::geometry(int scale, std::vector<Coord3> coords,
                                    OccupancyRole role)
{
  return geometry(scale, CoordSet::from_coords(std::move(coords)), role);
}

GroupingArrangement GroupingArrangement::make(GroupingVariant variant)
{
  GroupingArrangement arr;
  arr.variant_ = variant;
  switch (variant) {
  case GroupingVariant::OneStage:
    arr.stages_.resize(1);
    for (int r = 0; r < 8; ++r)
      arr.stage_of_rank_[r] = 0;
    break;
  case GroupingVariant::ThreeStage:
    arr.stages_.resize(3);
    for (int r = 0; r < 8; ++r) {
      int weight = std::popcount(unsigned(r));
      arr.stage_of_rank_[r] = std::min(weight, 2);
    }
    break;
  case GroupingVariant::EightStage:
    arr.stages_.resize(8);
    for (int r = 0; r < 8; ++r)
      arr.stage_of_rank_[r] = r;
    break;
  }
  for (int r = 0; r < 8; ++r)
    arr.stages_[arr.stage_of_rank_[r]].push_back(offset_from_rank(r));
  return arr;
}

GroupAssignment group_of(Coord3 offset, const GroupingArrangement& arr)
{
  if (offset.x < 0 || offset.x > 1 || offset.y < 0 || offset.y > 1
      || offset.z < 0 || offset.z > 1)
    throw std::invalid_argument("child offset must lie in {0,1}^3");
  return {offset_rank(offset) + 1, arr.stage_index(offset) + 1};
}

CoordSetPtr children_of(const CoordSet& parents)
{
  // Children of Morton-sorted parents are already Morton-sorted.
  std::vector<Coord3> coords;
  std::vector<uint64_t> keys;
  coords.reserve(parents.size() * 8);
  keys.reserve(parents.size() * 8);
  for (size_t i = 0; i < parents.size(); ++i) {
    const Coord3 base = parents[i] * 2;
    for (const Coord3& o : child_offsets()) {
      coords.push_back(base + o);
      keys.push_back((parents.key(i) << 3) | uint64_t(offset_rank(o)));
    }
  }
  for (const Coord3& c : coords)
    if (!in_morton_range(c))
      throw std::invalid_argument("upscaled coordinate out of range");
  return std::make_shared<const CoordSet>(std::move(coords), std::move(keys));
}

CoordSetPtr parents_of(const CoordSet& children)
{
  // Parent keys of a Morton-sorted set are sorted; dedup adjacent runs.
  std::vector<Coord3> coords;
  std::vector<uint64_t> keys;
  for (size_t i = 0; i < children.size(); ++i) {
    uint64_t pk = children.key(i) >> 3;
    if (keys.empty() || keys.back() != pk) {
      keys.push_back(pk);
      coords.push_back(parent_of(children[i]));
    }
  }
  return std::make_shared<const CoordSet>(std::move(coords), std::move(keys));
}

SparseTensor voxel_downscale_geom(const SparseTensor& t)
{
  if (t.scale() < 1)
    throw std::invalid_argument("cannot downscale root");
  return SparseTensor::geometry(t.scale() - 1, parents_of(t.coords()));
}

SparseTensor voxel_upscale_geom(const SparseTensor& t)
{
  return SparseTensor::geometry(t.scale() + 1, children_of(t.coords()),
                                OccupancyRole::MPPOV);
}

SparseTensor prune(const SparseTensor& t, std::span<const Coord3> keep)
{
  auto kept = CoordSet::from_coords({keep.begin(), keep.end()});
  Matrix feats(Eigen::Index(kept->size()), t.channels());
  for (size_t i = 0; i < kept->size(); ++i) {
    int64_t row = t.coords().find((*kept)[i]);
    if (row < 0)
      throw std::invalid_argument("prune: coordinate not present in tensor");
    feats.row(Eigen::Index(i)) = t.features().row(row);
  }
  return SparseTensor(t.scale(), std::move(kept), std::move(feats), t.role());
}

}  // namespace spcg
