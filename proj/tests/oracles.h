#pragma once

// Brute-force reference implementations shared by the unit and acceptance
// tests. None of these touch the hash index or kernel maps.

#include "spcg/conv.h"
#include "spcg/network.h"
#include "spcg/rng.h"
#include "spcg/sparse_tensor.h"
#include "spcg/tape.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <tuple>
#include <vector>

namespace spcg::oracle {

inline std::tuple<int, int, int> key(Coord3 c) { return {c.x, c.y, c.z}; }

inline std::set<std::tuple<int, int, int>> as_set(std::span<const Coord3> cs)
{
  std::set<std::tuple<int, int, int>> s;
  for (const auto& c : cs)
    s.insert(key(c));
  return s;
}

inline std::vector<Coord3> random_coords(Rng& rng, size_t n, int extent)
{
  std::set<std::tuple<int, int, int>> seen;
  std::vector<Coord3> out;
  while (out.size() < n) {
    Coord3 c{int(rng.below(uint64_t(extent))), int(rng.below(uint64_t(extent))),
             int(rng.below(uint64_t(extent)))};
    if (seen.insert(key(c)).second)
      out.push_back(c);
  }
  return out;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                            double lo = -1.0, double hi = 1.0)
{
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = rng.uniform(lo, hi);
  return m;
}

inline void randomize(ConvLayerParams& p, Rng& rng)
{
  for (auto& w : p.weights)
    w = random_matrix(rng, w.rows(), w.cols());
  for (Eigen::Index i = 0; i < p.bias.size(); ++i)
    p.bias[i] = rng.uniform(-1.0, 1.0);
}

inline void randomize(NetworkParams& net, Rng& rng, double scale = 0.5)
{
  for (auto& l : net.layers) {
    for (auto& w : l.weights)
      w = random_matrix(rng, w.rows(), w.cols(), -scale, scale);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i)
      l.bias[i] = rng.uniform(-scale, scale);
  }
  for (double& s : net.entropy_log_scales)
    s = rng.uniform(-0.5, 0.5);
}

// Dense grid of features with an occupancy mask.
class DenseGrid {
public:
  DenseGrid(int extent, int channels)
    : n_(extent), c_(channels), occ_(size_t(extent) * extent * extent, 0),
      f_(size_t(extent) * extent * extent * channels, 0.0)
  {
  }

  static DenseGrid from(const SparseTensor& t, int extent)
  {
    DenseGrid g(extent, t.channels());
    for (size_t i = 0; i < t.size(); ++i) {
      const Coord3 c = t.coords()[i];
      g.occ_[g.index(c)] = 1;
      for (int k = 0; k < g.c_; ++k)
        g.f_[g.index(c) * g.c_ + k] = t.features()(Eigen::Index(i), k);
    }
    return g;
  }

  bool occupied(Coord3 c) const
  {
    if (c.x < 0 || c.y < 0 || c.z < 0 || c.x >= n_ || c.y >= n_ || c.z >= n_)
      return false;
    return occ_[index(c)] != 0;
  }

  double at(Coord3 c, int k) const { return f_[index(c) * c_ + k]; }

private:
  size_t index(Coord3 c) const
  {
    return (size_t(c.x) * n_ + size_t(c.y)) * n_ + size_t(c.z);
  }

  int n_;
  int c_;
  std::vector<uint8_t> occ_;
  std::vector<double> f_;
};

inline RowVector apply_weight(const DenseGrid& g, Coord3 src, const Matrix& w)
{
  RowVector out = RowVector::Zero(w.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      out[j] += g.at(src, int(i)) * w(i, j);
  return out;
}

// Submanifold convolution evaluated directly on the dense grid.
inline Matrix dense_sconv(const SparseTensor& t, const ConvLayerParams& p,
                          int extent)
{
  DenseGrid g = DenseGrid::from(t, extent);
  Matrix out(Eigen::Index(t.size()), p.out_channels());
  for (size_t u = 0; u < t.size(); ++u) {
    RowVector acc = p.bias;
    for (size_t k = 0; k < p.offsets.size(); ++k) {
      const Coord3 src = t.coords()[u] + p.offsets[k];
      if (g.occupied(src))
        acc += apply_weight(g, src, p.weights[k]);
    }
    out.row(Eigen::Index(u)) = acc;
  }
  return out;
}

// Strided 2^3 convolution; output rows follow `parents`.
inline Matrix dense_down2(const SparseTensor& t, const ConvLayerParams& p,
                          std::span<const Coord3> parents, int extent)
{
  DenseGrid g = DenseGrid::from(t, extent);
  Matrix out(Eigen::Index(parents.size()), p.out_channels());
  for (size_t v = 0; v < parents.size(); ++v) {
    RowVector acc = p.bias;
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 2; ++y)
        for (int z = 0; z < 2; ++z) {
          const Coord3 o{x, y, z};
          const Coord3 src = parents[v] * 2 + o;
          if (g.occupied(src))
            acc += apply_weight(g, src, p.weights[size_t(4 * x + 2 * y + z)]);
        }
    out.row(Eigen::Index(v)) = acc;
  }
  return out;
}

// Transposed 2^3 convolution; output rows follow `children`.
inline Matrix dense_up2(const SparseTensor& t, const ConvLayerParams& p,
                        std::span<const Coord3> children, int extent)
{
  DenseGrid g = DenseGrid::from(t, extent);
  Matrix out(Eigen::Index(children.size()), p.out_channels());
  for (size_t u = 0; u < children.size(); ++u) {
    const Coord3 c = children[u];
    const Coord3 parent{c.x / 2, c.y / 2, c.z / 2};
    RowVector acc = p.bias;
    if (g.occupied(parent)) {
      const int rank = 4 * (c.x % 2) + 2 * (c.y % 2) + (c.z % 2);
      acc += apply_weight(g, parent, p.weights[size_t(rank)]);
    }
    out.row(Eigen::Index(u)) = acc;
  }
  return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b)
{
  if (a.rows() != b.rows() || a.cols() != b.cols())
    return INFINITY;
  if (a.size() == 0)
    return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

// Central finite differences of a scalar function over every entry of a
// parameter span; returns the worst relative error against `analytic`.
// Relative error is |a - n| / max(|a|, |n|, 1e-3) so that tiny gradients
// are compared in absolute terms.
inline double fd_relative_error(std::span<double> params,
                                std::span<const double> analytic,
                                const std::function<double()>& f,
                                double h = 1e-5)
{
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double fp = f();
    params[i] = saved - h;
    const double fm = f();
    params[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({1e-3, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

// Brute-force nearest squared distance from a to any point of b.
inline double nearest_sq(Coord3 a, std::span<const Coord3> b)
{
  double best = INFINITY;
  for (const auto& q : b) {
    const double dx = double(a.x - q.x);
    const double dy = double(a.y - q.y);
    const double dz = double(a.z - q.z);
    best = std::min(best, dx * dx + dy * dy + dz * dz);
  }
  return best;
}

}  // namespace spcg::oracle
