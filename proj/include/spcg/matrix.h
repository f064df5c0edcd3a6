#pragma once

#include <Eigen/Core>

namespace spcg {

// Per-voxel feature storage: one row per coordinate, one column per channel.
using Matrix =
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace spcg
