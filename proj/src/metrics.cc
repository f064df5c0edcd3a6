#include "spcg/metrics.h"

#include "spcg/byte_io.h"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace spcg {

namespace {

enum class ScalarType { I8, U8, I16, U16, I32, U32, F32, F64 };

std::optional<ScalarType> parse_scalar(std::string_view t)
{
  if (t == "char" || t == "int8") return ScalarType::I8;
  if (t == "uchar" || t == "uint8") return ScalarType::U8;
  if (t == "short" || t == "int16") return ScalarType::I16;
  if (t == "ushort" || t == "uint16") return ScalarType::U16;
  if (t == "int" || t == "int32") return ScalarType::I32;
  if (t == "uint" || t == "uint32") return ScalarType::U32;
  if (t == "float" || t == "float32") return ScalarType::F32;
  if (t == "double" || t == "float64") return ScalarType::F64;
  return std::nullopt;
}

size_t scalar_size(ScalarType t)
{
  switch (t) {
  case ScalarType::I8:
  case ScalarType::U8: return 1;
  case ScalarType::I16:
  case ScalarType::U16: return 2;
  case ScalarType::I32:
  case ScalarType::U32:
  case ScalarType::F32: return 4;
  case ScalarType::F64: return 8;
  }
  return 0;
}

template <typename T>
T load_le(const uint8_t* p)
{
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

double read_scalar(ScalarType t, const uint8_t* p)
{
  switch (t) {
  case ScalarType::I8: return double(int8_t(p[0]));
  case ScalarType::U8: return double(p[0]);
  case ScalarType::I16: return double(load_le<int16_t>(p));
  case ScalarType::U16: return double(load_le<uint16_t>(p));
  case ScalarType::I32: return double(load_le<int32_t>(p));
  case ScalarType::U32: return double(load_le<uint32_t>(p));
  case ScalarType::F32: return double(load_le<float>(p));
  case ScalarType::F64: return load_le<double>(p);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  ScalarType type = ScalarType::F32;
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  uint64_t count = 0;
  std::vector<PlyProperty> props;
};

std::vector<std::string> split_words(const std::string& line)
{
  std::istringstream in(line);
  return {std::istream_iterator<std::string>(in), std::istream_iterator<std::string>()};
}

[[noreturn]] void header_error(size_t line, const std::string& what)
{
  throw FormatError("PLY header line " + std::to_string(line) + ": " + what);
}

}  // namespace

PlyData parse_ply(std::span<const uint8_t> bytes)
{
  size_t pos = 0;
  size_t line_no = 0;
  auto next_line = [&]() -> std::optional<std::string> {
    if (pos >= bytes.size())
      return std::nullopt;
    size_t end = pos;
    while (end < bytes.size() && bytes[end] != '\n')
      ++end;
    std::string s(reinterpret_cast<const char*>(bytes.data()) + pos, end - pos);
    if (!s.empty() && s.back() == '\r')
      s.pop_back();
    pos = std::min(end + 1, bytes.size());
    ++line_no;
    return s;
  };

  auto first = next_line();
  if (!first || *first != "ply")
    header_error(1, "missing 'ply' magic");
  bool binary = false;
  bool have_format = false;
  std::vector<PlyElement> elements;
  for (;;) {
    auto line = next_line();
    if (!line)
      header_error(line_no + 1, "missing end_header");
    auto w = split_words(*line);
    if (w.empty() || w[0] == "comment" || w[0] == "obj_info")
      continue;
    if (w[0] == "end_header")
      break;
    if (w[0] == "format") {
      if (w.size() < 2)
        header_error(line_no, "bad format line");
      if (w[1] == "ascii")
        binary = false;
      else if (w[1] == "binary_little_endian")
        binary = true;
      else
        header_error(line_no, "unsupported format '" + w[1] + "'");
      have_format = true;
    } else if (w[0] == "element") {
      if (w.size() != 3)
        header_error(line_no, "bad element line");
      PlyElement e;
      e.name = w[1];
      auto [p, ec] = std::from_chars(w[2].data(), w[2].data() + w[2].size(), e.count);
      if (ec != std::errc() || p != w[2].data() + w[2].size())
        header_error(line_no, "bad element count '" + w[2] + "'");
      elements.push_back(std::move(e));
    } else if (w[0] == "property") {
      if (elements.empty())
        header_error(line_no, "property before any element");
      PlyProperty prop;
      if (w.size() == 5 && w[1] == "list") {
        prop.is_list = true;
        prop.name = w[4];
      } else if (w.size() == 3) {
        auto t = parse_scalar(w[1]);
        if (!t)
          header_error(line_no, "unknown property type '" + w[1] + "'");
        prop.type = *t;
        prop.name = w[2];
      } else {
        header_error(line_no, "bad property line");
      }
      elements.back().props.push_back(std::move(prop));
    } else {
      header_error(line_no, "unexpected keyword '" + w[0] + "'");
    }
  }
  if (!have_format)
    header_error(line_no, "missing format line");

  auto vertex = std::find_if(elements.begin(), elements.end(),
                             [](const PlyElement& e) { return e.name == "vertex"; });
  if (vertex == elements.end())
    header_error(line_no, "missing 'element vertex'");
  int axis_prop[3] = {-1, -1, -1};
  for (size_t i = 0; i < vertex->props.size(); ++i) {
    const auto& name = vertex->props[i].name;
    for (int a = 0; a < 3; ++a)
      if (name == std::string(1, char('x' + a))) {
        if (vertex->props[i].is_list)
          header_error(line_no, "list-typed coordinate");
        axis_prop[a] = int(i);
      }
  }
  for (int a = 0; a < 3; ++a)
    if (axis_prop[a] < 0)
      header_error(line_no, std::string("missing vertex property ") + char('x' + a));

  PlyData out;
  out.xyz.reserve(size_t(std::min<uint64_t>(vertex->count, 1u << 24)));
  auto note = [&](std::array<double, 3> p) {
    for (double v : p) {
      if (!std::isfinite(v))
        throw FormatError("non-finite vertex coordinate");
      if (v != std::floor(v))
        out.integral = false;
    }
    out.xyz.push_back(p);
  };

  if (!binary) {
    for (auto e = elements.begin(); e != vertex + 1; ++e) {
      for (uint64_t r = 0; r < e->count; ++r) {
        auto line = next_line();
        if (!line)
          throw FormatError("PLY body truncated at line " + std::to_string(line_no));
        if (e != vertex)
          continue;
        auto w = split_words(*line);
        if (w.size() < vertex->props.size())
          throw FormatError("PLY line " + std::to_string(line_no) + ": too few values");
        std::array<double, 3> p{};
        for (int a = 0; a < 3; ++a) {
          const auto& s = w[size_t(axis_prop[a])];
          auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), p[size_t(a)]);
          if (ec != std::errc() || ptr != s.data() + s.size())
            throw FormatError("PLY line " + std::to_string(line_no) + ": bad number '" + s + "'");
        }
        note(p);
      }
    }
    return out;
  }

  for (auto e = elements.begin(); e != vertex + 1; ++e) {
    size_t stride = 0;
    for (const auto& p : e->props) {
      if (p.is_list)
        throw FormatError("binary PLY: list properties before vertices are unsupported");
      stride += scalar_size(p.type);
    }
    if (e->count > (bytes.size() - pos) / std::max<size_t>(stride, 1))
      throw FormatError("binary PLY body truncated");
    if (e != vertex) {
      pos += stride * e->count;
      continue;
    }
    std::vector<size_t> offset(e->props.size());
    for (size_t i = 1; i < offset.size(); ++i)
      offset[i] = offset[i - 1] + scalar_size(e->props[i - 1].type);
    for (uint64_t r = 0; r < e->count; ++r) {
      const uint8_t* row = bytes.data() + pos + r * stride;
      std::array<double, 3> p{};
      for (int a = 0; a < 3; ++a) {
        const auto& prop = e->props[size_t(axis_prop[a])];
        p[size_t(a)] = read_scalar(prop.type, row + offset[size_t(axis_prop[a])]);
      }
      note(p);
    }
    pos += stride * e->count;
  }
  return out;
}

PlyData read_ply(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return parse_ply(bytes);
}

std::vector<uint8_t> format_ply(const PointCloud& cloud, PlyFormat format)
{
  std::ostringstream head;
  head << "ply\nformat " << (format == PlyFormat::Ascii ? "ascii" : "binary_little_endian")
       << " 1.0\nelement vertex " << cloud.points.size()
       << "\nproperty int x\nproperty int y\nproperty int z\nend_header\n";
  const std::string h = head.str();
  std::vector<uint8_t> out(h.begin(), h.end());
  if (format == PlyFormat::Ascii) {
    std::string body;
    for (const auto& c : cloud.points)
      body += std::to_string(c.x) + ' ' + std::to_string(c.y) + ' ' + std::to_string(c.z) + '\n';
    out.insert(out.end(), body.begin(), body.end());
  } else {
    ByteWriter w;
    for (const auto& c : cloud.points) {
      w.put_u32(uint32_t(c.x));
      w.put_u32(uint32_t(c.y));
      w.put_u32(uint32_t(c.z));
    }
    out.insert(out.end(), w.bytes().begin(), w.bytes().end());
  }
  return out;
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud, PlyFormat format)
{
  const auto bytes = format_ply(cloud, format);
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out)
    throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------

BoundingBox BoundingBox::of(std::span<const std::array<double, 3>> xyz)
{
  BoundingBox b;
  b.lo.fill(std::numeric_limits<double>::infinity());
  b.hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& p : xyz)
    for (size_t a = 0; a < 3; ++a) {
      b.lo[a] = std::min(b.lo[a], p[a]);
      b.hi[a] = std::max(b.hi[a], p[a]);
    }
  return b;
}

BoundingBox BoundingBox::grid(int precision)
{
  const double top = std::ldexp(1.0, precision) - 1.0;
  return {{0, 0, 0}, {top, top, top}};
}

PointCloud quantize(std::span<const std::array<double, 3>> xyz, int precision,
                    const BoundingBox& box)
{
  if (precision < 1 || precision > 18)
    throw std::invalid_argument("precision must be in [1, 18]");
  double extent = 0.0;
  for (size_t a = 0; a < 3; ++a) {
    if (!(box.hi[a] >= box.lo[a]))
      throw std::invalid_argument("degenerate bounding box");
    extent = std::max(extent, box.hi[a] - box.lo[a]);
  }
  if (!(extent > 0.0) || !std::isfinite(extent))
    throw std::invalid_argument("degenerate bounding box");
  const double top = std::ldexp(1.0, precision) - 1.0;
  const double s = top / extent;
  PointCloud pc;
  pc.precision = precision;
  pc.original_count = xyz.size();
  pc.points.reserve(xyz.size());
  for (const auto& p : xyz) {
    Coord3 c;
    int32_t* out[3] = {&c.x, &c.y, &c.z};
    for (size_t a = 0; a < 3; ++a)
      *out[a] = int32_t(std::clamp(std::round((p[a] - box.lo[a]) * s), 0.0, top));
    pc.points.push_back(c);
  }
  pc.canonicalize();
  return pc;
}

PointCloud to_point_cloud(const PlyData& ply, int precision)
{
  if (ply.xyz.empty())
    throw std::invalid_argument("empty cloud");
  const double top = std::ldexp(1.0, precision) - 1.0;
  const bool in_grid = ply.integral && std::all_of(ply.xyz.begin(), ply.xyz.end(), [&](const auto& p) {
    return p[0] >= 0 && p[1] >= 0 && p[2] >= 0 && p[0] <= top && p[1] <= top && p[2] <= top;
  });
  if (in_grid)
    return quantize(ply.xyz, precision, BoundingBox::grid(precision));
  return quantize(ply.xyz, precision, BoundingBox::of(ply.xyz));
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kCellBits = 21;

uint64_t cell_key(const std::array<int64_t, 3>& c, const std::array<int64_t, 3>& lo)
{
  return (uint64_t(c[0] - lo[0]) << (2 * kCellBits)) | (uint64_t(c[1] - lo[1]) << kCellBits)
         | uint64_t(c[2] - lo[2]);
}

bool hit_less(const NeighborIndex::Hit& a, const NeighborIndex::Hit& b)
{
  return a.sq_dist < b.sq_dist || (a.sq_dist == b.sq_dist && a.index < b.index);
}

}  // namespace

NeighborIndex::NeighborIndex(std::span<const Coord3> points) : pts_(points.begin(), points.end())
{
  if (pts_.empty())
    return;
  std::array<int64_t, 3> mn{pts_[0].x, pts_[0].y, pts_[0].z};
  std::array<int64_t, 3> mx = mn;
  for (const auto& p : pts_) {
    const int64_t v[3] = {p.x, p.y, p.z};
    for (size_t a = 0; a < 3; ++a) {
      mn[a] = std::min(mn[a], v[a]);
      mx[a] = std::max(mx[a], v[a]);
    }
  }
  const double extent = double(std::max({mx[0] - mn[0], mx[1] - mn[1], mx[2] - mn[2]})) + 1.0;
  // Roughly a couple of points per occupied cell for surface-like data.
  cell_ = std::max(1.0, std::floor(extent / std::sqrt(double(pts_.size()) / 2.0)));
  while (extent / cell_ >= double(1 << kCellBits))
    cell_ *= 2;
  lo_ = cell_of({double(mn[0]), double(mn[1]), double(mn[2])});
  hi_ = cell_of({double(mx[0]), double(mx[1]), double(mx[2])});
  order_.reserve(pts_.size());
  for (size_t i = 0; i < pts_.size(); ++i)
    order_.push_back(
      {cell_key(cell_of({double(pts_[i].x), double(pts_[i].y), double(pts_[i].z)}), lo_),
       uint32_t(i)});
  std::sort(order_.begin(), order_.end());
  keys_.reserve(order_.size());
  for (const auto& [k, i] : order_)
    keys_.push_back(k);
}

std::array<int64_t, 3> NeighborIndex::cell_of(const std::array<double, 3>& q) const
{
  return {int64_t(std::floor(q[0] / cell_)), int64_t(std::floor(q[1] / cell_)),
          int64_t(std::floor(q[2] / cell_))};
}

void NeighborIndex::visit_ring(const std::array<int64_t, 3>& c, int64_t r,
                               const std::array<double, 3>& q, std::vector<Hit>& best,
                               size_t k) const
{
  auto visit_cell = [&](int64_t x, int64_t y, int64_t z) {
    if (x < lo_[0] || y < lo_[1] || z < lo_[2] || x > hi_[0] || y > hi_[1] || z > hi_[2])
      return;
    const uint64_t key = cell_key({x, y, z}, lo_);
    auto range = std::equal_range(keys_.begin(), keys_.end(), key);
    for (auto it = range.first; it != range.second; ++it) {
      const size_t i = order_[size_t(it - keys_.begin())].second;
      const double dx = pts_[i].x - q[0], dy = pts_[i].y - q[1], dz = pts_[i].z - q[2];
      Hit h{i, dx * dx + dy * dy + dz * dz};
      if (best.size() == k && !hit_less(h, best.back()))
        continue;
      best.insert(std::upper_bound(best.begin(), best.end(), h, hit_less), h);
      if (best.size() > k)
        best.pop_back();
    }
  };
  for (int64_t dx = -r; dx <= r; ++dx)
    for (int64_t dy = -r; dy <= r; ++dy) {
      const bool edge = std::abs(dx) == r || std::abs(dy) == r;
      if (edge) {
        for (int64_t dz = -r; dz <= r; ++dz)
          visit_cell(c[0] + dx, c[1] + dy, c[2] + dz);
      } else {
        visit_cell(c[0] + dx, c[1] + dy, c[2] - r);
        if (r > 0)
          visit_cell(c[0] + dx, c[1] + dy, c[2] + r);
      }
    }
}

std::vector<NeighborIndex::Hit> NeighborIndex::knn(const std::array<double, 3>& q, size_t k) const
{
  std::vector<Hit> best;
  if (pts_.empty() || k == 0)
    return best;
  k = std::min(k, pts_.size());
  const auto c = cell_of(q);
  int64_t reach = 0;
  for (size_t a = 0; a < 3; ++a)
    reach = std::max({reach, std::abs(c[a] - lo_[a]), std::abs(hi_[a] - c[a])});
  for (int64_t r = 0; r <= reach; ++r) {
    visit_ring(c, r, q, best, k);
    // Unvisited cells are at least r cells away.
    const double bound = double(r) * cell_;
    if (best.size() == k && best.back().sq_dist <= bound * bound)
      break;
  }
  return best;
}

NeighborIndex::Hit NeighborIndex::nearest(const std::array<double, 3>& q) const
{
  if (pts_.empty())
    throw std::invalid_argument("nearest neighbour in an empty cloud");
  return knn(q, 1).front();
}

// ---------------------------------------------------------------------------

namespace {

std::array<double, 3> as_point(const Coord3& c)
{
  return {double(c.x), double(c.y), double(c.z)};
}

void require_points(std::span<const Coord3> a, std::span<const Coord3> b)
{
  if (a.empty() || b.empty())
    throw std::invalid_argument("empty cloud");
}

DistortionResult finish(double mse, double peak)
{
  DistortionResult r;
  r.mse = mse;
  r.identical = mse == 0.0;
  r.psnr = psnr_from_mse(mse, peak);
  return r;
}

double d2_one_way(std::span<const Coord3> from, std::span<const Coord3> to,
                  const std::vector<std::array<double, 3>>& normals, const NeighborIndex& idx)
{
  double sum = 0.0;
  for (const auto& p : from) {
    auto hit = idx.nearest(as_point(p));
    const auto& n = normals[hit.index];
    const Coord3& t = to[hit.index];
    const double e = (p.x - t.x) * n[0] + (p.y - t.y) * n[1] + (p.z - t.z) * n[2];
    sum += e * e;
  }
  return sum / double(from.size());
}

}  // namespace

double psnr_from_mse(double mse, double peak)
{
  if (mse == 0.0)
    return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(3.0 * peak * peak / mse);
}

double d1_mse_one_way(std::span<const Coord3> from, std::span<const Coord3> to)
{
  require_points(from, to);
  NeighborIndex idx(to);
  double sum = 0.0;
  for (const auto& p : from)
    sum += idx.nearest(as_point(p)).sq_dist;
  return sum / double(from.size());
}

DistortionResult d1_psnr(std::span<const Coord3> a, std::span<const Coord3> b, double peak)
{
  return finish(std::max(d1_mse_one_way(a, b), d1_mse_one_way(b, a)), peak);
}

std::vector<std::array<double, 3>> estimate_normals(std::span<const Coord3> cloud, size_t k)
{
  if (k < 3 || cloud.size() < k)
    throw std::invalid_argument("normal estimation needs at least " + std::to_string(k)
                                + " points");
  NeighborIndex idx(cloud);
  std::vector<std::array<double, 3>> normals(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    auto hits = idx.knn(as_point(cloud[i]), k);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& h : hits)
      mean += Eigen::Vector3d(cloud[h.index].x, cloud[h.index].y, cloud[h.index].z);
    mean /= double(hits.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& h : hits) {
      Eigen::Vector3d d =
        Eigen::Vector3d(cloud[h.index].x, cloud[h.index].y, cloud[h.index].z) - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    Eigen::Vector3d n = eig.eigenvectors().col(0);
    normals[i] = {n.x(), n.y(), n.z()};
  }
  return normals;
}

double d2_mse_one_way(std::span<const Coord3> from, std::span<const Coord3> to)
{
  require_points(from, to);
  return d2_one_way(from, to, estimate_normals(to), NeighborIndex(to));
}

DistortionResult d2_psnr(std::span<const Coord3> a, std::span<const Coord3> b, double peak)
{
  return finish(std::max(d2_mse_one_way(a, b), d2_mse_one_way(b, a)), peak);
}

QualityReport evaluate(const PointCloud& reference, const PointCloud& decoded, double bpp)
{
  QualityReport r;
  const double peak = std::ldexp(1.0, reference.precision) - 1.0;
  r.d1 = d1_psnr(reference.points, decoded.points, peak);
  if (reference.points.size() >= 8 && decoded.points.size() >= 8)
    r.d2 = d2_psnr(reference.points, decoded.points, peak);
  r.bpp = bpp;
  r.reference_points = reference.points.size();
  r.decoded_points = decoded.points.size();
  return r;
}

namespace {

nlohmann::json distortion_json(const DistortionResult& d)
{
  nlohmann::json j;
  j["mse"] = d.mse;
  j["psnr"] = d.identical ? nlohmann::json(nullptr) : nlohmann::json(d.psnr);
  j["identical"] = d.identical;
  return j;
}

std::string psnr_text(const DistortionResult& d)
{
  if (d.identical)
    return "identical";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", d.psnr);
  return buf;
}

}  // namespace

std::string QualityReport::to_json() const
{
  nlohmann::json j;
  j["d1"] = distortion_json(d1);
  j["d2"] = d2 ? distortion_json(*d2) : nlohmann::json(nullptr);
  j["bpp"] = bpp;
  j["reference_points"] = reference_points;
  j["decoded_points"] = decoded_points;
  return j.dump();
}

std::string QualityReport::to_table() const
{
  std::vector<std::pair<std::string, std::string>> rows;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", bpp);
  rows.push_back({"bpp", buf});
  rows.push_back({"d1_psnr_db", psnr_text(d1)});
  std::snprintf(buf, sizeof buf, "%.6g", d1.mse);
  rows.push_back({"d1_mse", buf});
  if (d2) {
    rows.push_back({"d2_psnr_db", psnr_text(*d2)});
    std::snprintf(buf, sizeof buf, "%.6g", d2->mse);
    rows.push_back({"d2_mse", buf});
  }
  rows.push_back({"reference_points", std::to_string(reference_points)});
  rows.push_back({"decoded_points", std::to_string(decoded_points)});
  size_t w = 0;
  for (const auto& [k, v] : rows)
    w = std::max(w, k.size());
  std::string out;
  for (const auto& [k, v] : rows)
    out += k + std::string(w - k.size() + 2, ' ') + v + '\n';
  return out;
}

}  // namespace spcg
