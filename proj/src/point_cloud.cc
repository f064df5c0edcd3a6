#include "spcg/point_cloud.h"

#include <algorithm>

namespace spcg {

void PointCloud::canonicalize()
{
  std::vector<std::pair<uint64_t, Coord3>> keyed;
  keyed.reserve(points.size());
  for (const auto& c : points)
    keyed.push_back({morton_encode(c), c});
  std::sort(keyed.begin(), keyed.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  points.clear();
  for (size_t i = 0; i < keyed.size(); ++i)
    if (i == 0 || keyed[i].first != keyed[i - 1].first)
      points.push_back(keyed[i].second);
}

bool PointCloud::in_range() const
{
  const int32_t lim = int32_t(1) << precision;
  return std::all_of(points.begin(), points.end(), [&](const Coord3& c) {
    return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < lim && c.y < lim && c.z < lim;
  });
}

}  // namespace spcg
