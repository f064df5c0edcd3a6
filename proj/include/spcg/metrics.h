#pragma once

#include "spcg/point_cloud.h"

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spcg {

// ---------------------------------------------------------------------------
// PLY

struct PlyData {
  std::vector<std::array<double, 3>> xyz;
  bool integral = true;  // every coordinate is a whole number
};

enum class PlyFormat { Ascii, BinaryLE };

// ASCII or binary little-endian; x, y, z of any scalar type. Other vertex
// properties and elements after the vertices are ignored. Throws
// FormatError with the header line number on malformed input.
PlyData read_ply(const std::filesystem::path& path);
PlyData parse_ply(std::span<const uint8_t> bytes);

void write_ply(const std::filesystem::path& path, const PointCloud& cloud,
               PlyFormat format = PlyFormat::BinaryLE);
std::vector<uint8_t> format_ply(const PointCloud& cloud, PlyFormat format);

struct BoundingBox {
  std::array<double, 3> lo{};
  std::array<double, 3> hi{};

  static BoundingBox of(std::span<const std::array<double, 3>> xyz);
  // [0, 2^N - 1] on every axis.
  static BoundingBox grid(int precision);
};

// Isotropic affine map of the box onto [0, 2^N - 1] (longest side spans the
// grid), round to nearest, deduplicate. original_count is the input size.
PointCloud quantize(std::span<const std::array<double, 3>> xyz, int precision,
                    const BoundingBox& box);

// Integral in-range clouds pass through unchanged; anything else is
// quantized over its own bounding box.
PointCloud to_point_cloud(const PlyData& ply, int precision);

// ---------------------------------------------------------------------------
// Nearest neighbours

// Uniform grid of buckets over integer points.
class NeighborIndex {
public:
  explicit NeighborIndex(std::span<const Coord3> points);

  struct Hit {
    size_t index;
    double sq_dist;
  };

  // Nearest point (ties to the lower index). Requires a non-empty index.
  Hit nearest(const std::array<double, 3>& q) const;
  // k nearest, ascending by (distance, index).
  std::vector<Hit> knn(const std::array<double, 3>& q, size_t k) const;

private:
  std::array<int64_t, 3> cell_of(const std::array<double, 3>& q) const;
  void visit_ring(const std::array<int64_t, 3>& c, int64_t r,
                  const std::array<double, 3>& q, std::vector<Hit>& best, size_t k) const;

  std::vector<Coord3> pts_;
  double cell_ = 1.0;
  std::array<int64_t, 3> lo_{}, hi_{};  // occupied cell range
  std::vector<std::pair<uint64_t, uint32_t>> order_;  // (cell key, point)
  std::vector<uint64_t> keys_;
};

// ---------------------------------------------------------------------------
// Quality

struct DistortionResult {
  double mse = 0.0;  // symmetric (max of both directions)
  double psnr = 0.0;  // +inf when identical
  bool identical = false;
};

// Point-to-point. peak defaults to 2^N - 1 at the caller.
DistortionResult d1_psnr(std::span<const Coord3> a, std::span<const Coord3> b, double peak);
double d1_mse_one_way(std::span<const Coord3> from, std::span<const Coord3> to);

// Point-to-plane, normals by PCA over the 8 nearest neighbours of the
// matched point in its own cloud. Both clouds need at least 8 points.
DistortionResult d2_psnr(std::span<const Coord3> a, std::span<const Coord3> b, double peak);
double d2_mse_one_way(std::span<const Coord3> from, std::span<const Coord3> to);

// Unit normals of every point of `cloud` (PCA over k nearest, k >= 3).
std::vector<std::array<double, 3>> estimate_normals(std::span<const Coord3> cloud,
                                                    size_t k = 8);

double psnr_from_mse(double mse, double peak);

struct QualityReport {
  DistortionResult d1;
  std::optional<DistortionResult> d2;
  double bpp = 0.0;
  size_t reference_points = 0;
  size_t decoded_points = 0;

  std::string to_json() const;
  std::string to_table() const;
};

// D2 is skipped when either cloud has fewer than 8 points.
QualityReport evaluate(const PointCloud& reference, const PointCloud& decoded, double bpp);

}  // namespace spcg
