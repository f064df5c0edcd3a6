#include "spcg/training.h"

#include "spcg/adam.h"
#include "spcg/codec.h"
#include "spcg/metrics.h"
#include "spcg/sopa.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace spcg {

namespace {

constexpr double kPi = std::numbers::pi;

class CloudBuilder {
public:
  explicit CloudBuilder(int precision) : n_(precision), top_((1 << precision) - 1) {}

  void add(double x, double y, double z)
  {
    const long cx = std::lround(x), cy = std::lround(y), cz = std::lround(z);
    if (cx < 0 || cy < 0 || cz < 0 || cx > top_ || cy > top_ || cz > top_)
      return;
    pts_.push_back({int32_t(cx), int32_t(cy), int32_t(cz)});
  }

  PointCloud finish()
  {
    PointCloud pc{std::move(pts_), n_, 0};
    pc.canonicalize();
    pc.original_count = pc.points.size();
    return pc;
  }

  int extent() const { return top_ + 1; }

private:
  int n_;
  long top_;
  std::vector<Coord3> pts_;
};

using Vec3 = std::array<double, 3>;

Vec3 unit_random(Rng& rng)
{
  for (;;) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-9)
      return {v[0] / n, v[1] / n, v[2] / n};
  }
}

Vec3 cross(const Vec3& a, const Vec3& b)
{
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 normalized(const Vec3& v)
{
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

void add_sphere(CloudBuilder& b, Vec3 c, double r, Rng& rng)
{
  const size_t samples = size_t(4.0 * kPi * r * r * 4.0) + 16;
  for (size_t i = 0; i < samples; ++i) {
    const Vec3 u = unit_random(rng);
    b.add(c[0] + r * u[0], c[1] + r * u[1], c[2] + r * u[2]);
  }
}

// Box with half sizes h, rotated by `yaw` about z and `tilt` about x.
void add_box(CloudBuilder& b, Vec3 c, Vec3 h, double yaw, double tilt)
{
  const double cy = std::cos(yaw), sy = std::sin(yaw), ct = std::cos(tilt), st = std::sin(tilt);
  auto place = [&](double x, double y, double z) {
    const double y1 = ct * y - st * z, z1 = st * y + ct * z;
    b.add(c[0] + cy * x - sy * y1, c[1] + sy * x + cy * y1, c[2] + z1);
  };
  const double step = 0.5;
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    for (double s : {-1.0, 1.0})
      for (double a = -h[size_t(u)]; a <= h[size_t(u)]; a += step)
        for (double d = -h[size_t(v)]; d <= h[size_t(v)]; d += step) {
          Vec3 p{};
          p[size_t(axis)] = s * h[size_t(axis)];
          p[size_t(u)] = a;
          p[size_t(v)] = d;
          place(p[0], p[1], p[2]);
        }
  }
}

// Square patch around c with normal n, gently curved.
void add_patch(CloudBuilder& b, Vec3 c, Vec3 n, double half, double curvature)
{
  const Vec3 helper = std::abs(n[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const Vec3 t1 = normalized(cross(n, helper));
  const Vec3 t2 = cross(n, t1);
  for (double a = -half; a <= half; a += 0.5)
    for (double d = -half; d <= half; d += 0.5) {
      const double h = curvature * (a * a + d * d) / half;
      b.add(c[0] + a * t1[0] + d * t2[0] + h * n[0], c[1] + a * t1[1] + d * t2[1] + h * n[1],
            c[2] + a * t1[2] + d * t2[2] + h * n[2]);
    }
}

struct Aabb {
  Vec3 lo, hi;
};

// Spinning multi-beam scanner over a ground plane with box obstacles.
void add_scan(CloudBuilder& b, Rng& rng)
{
  const double e = b.extent();
  const double ground = rng.uniform(0.05, 0.15) * e;
  const Vec3 sensor{e * rng.uniform(0.4, 0.6), e * rng.uniform(0.4, 0.6),
                    ground + rng.uniform(0.08, 0.15) * e};
  std::vector<Aabb> boxes;
  const int n_boxes = 3 + int(rng.below(5));
  for (int k = 0; k < n_boxes; ++k) {
    const Vec3 c{e * rng.uniform(0.1, 0.9), e * rng.uniform(0.1, 0.9), 0};
    const double hx = rng.uniform(0.03, 0.1) * e, hy = rng.uniform(0.03, 0.1) * e;
    if (std::abs(c[0] - sensor[0]) < hx + 2 && std::abs(c[1] - sensor[1]) < hy + 2)
      continue;
    boxes.push_back({{c[0] - hx, c[1] - hy, ground}, {c[0] + hx, c[1] + hy, ground + rng.uniform(0.1, 0.3) * e}});
  }
  const int beams = 16;
  const int azimuths = int(3 * e);
  const double max_range = 0.75 * e;
  for (int k = 0; k < beams; ++k) {
    const double elev = (-24.0 + 26.0 * k / (beams - 1)) * kPi / 180.0;
    for (int j = 0; j < azimuths; ++j) {
      const double az = 2 * kPi * (j + rng.uniform(0, 0.3)) / azimuths;
      const Vec3 d{std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev)};
      double t = max_range;
      if (d[2] < 0)
        t = std::min(t, (ground - sensor[2]) / d[2]);
      for (const auto& box : boxes) {
        double t0 = 0, t1 = t;
        for (size_t a = 0; a < 3 && t0 <= t1; ++a) {
          if (std::abs(d[a]) < 1e-12) {
            if (sensor[a] < box.lo[a] || sensor[a] > box.hi[a])
              t1 = -1;
            continue;
          }
          double ta = (box.lo[a] - sensor[a]) / d[a], tb = (box.hi[a] - sensor[a]) / d[a];
          if (ta > tb)
            std::swap(ta, tb);
          t0 = std::max(t0, ta);
          t1 = std::min(t1, tb);
        }
        if (t0 <= t1 && t0 > 0)
          t = std::min(t, t0);
      }
      if (t < max_range)
        b.add(sensor[0] + t * d[0], sensor[1] + t * d[1], sensor[2] + t * d[2]);
    }
  }
}

void add_dense_shape(CloudBuilder& b, int which, double size, Rng& rng)
{
  const double e = b.extent();
  auto centre = [&](double margin) {
    return Vec3{rng.uniform(margin, e - margin), rng.uniform(margin, e - margin),
                rng.uniform(margin, e - margin)};
  };
  switch (which) {
  case 0: {
    const double r = size * e * rng.uniform(0.3, 0.45);
    add_sphere(b, centre(r + 1), r, rng);
    break;
  }
  case 1: {
    const Vec3 h{size * e * rng.uniform(0.15, 0.35), size * e * rng.uniform(0.15, 0.35),
                 size * e * rng.uniform(0.15, 0.35)};
    const double reach = std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
    add_box(b, centre(std::min(reach + 1, e / 2 - 1)), h, rng.uniform(0, kPi / 2),
            rng.uniform(-0.4, 0.4));
    break;
  }
  default:
    add_patch(b, centre(e * 0.3), unit_random(rng), size * e * rng.uniform(0.3, 0.45),
              rng.uniform(-0.15, 0.15));
    break;
  }
}

}  // namespace

std::string_view cloud_kind_name(CloudKind kind)
{
  switch (kind) {
  case CloudKind::SphereShell: return "sphere_shell";
  case CloudKind::BoxSurface: return "box_surface";
  case CloudKind::PlanePatch: return "plane_patch";
  case CloudKind::LineScan: return "line_scan";
  case CloudKind::Union: return "union";
  }
  return "?";
}

std::optional<CloudKind> parse_cloud_kind(std::string_view name)
{
  for (auto k : {CloudKind::SphereShell, CloudKind::BoxSurface, CloudKind::PlanePatch,
                 CloudKind::LineScan, CloudKind::Union})
    if (cloud_kind_name(k) == name)
      return k;
  return std::nullopt;
}

PointCloud sphere_shell(int precision, std::array<double, 3> centre, double radius, Rng& rng)
{
  CloudBuilder b(precision);
  add_sphere(b, centre, radius, rng);
  return b.finish();
}

PointCloud synth_cloud(CloudKind kind, int precision, uint64_t seed)
{
  if (precision < 4 || precision > 10)
    throw std::invalid_argument("synthetic clouds need N in [4, 10]");
  Rng rng(derive_seed(seed, uint64_t(kind) * 131 + uint64_t(precision)));
  CloudBuilder b(precision);
  switch (kind) {
  case CloudKind::SphereShell: add_dense_shape(b, 0, 1.0, rng); break;
  case CloudKind::BoxSurface: add_dense_shape(b, 1, 1.0, rng); break;
  case CloudKind::PlanePatch: add_dense_shape(b, 2, 1.0, rng); break;
  case CloudKind::LineScan: add_scan(b, rng); break;
  case CloudKind::Union: {
    const int parts = 2 + int(rng.below(2));
    for (int k = 0; k < parts; ++k)
      add_dense_shape(b, int(rng.below(3)), 0.6, rng);
    break;
  }
  }
  auto pc = b.finish();
  if (pc.points.empty())
    pc.points.push_back({0, 0, 0});
  return pc;
}

PointCloud scale_cloud(const PointCloud& cloud, double s)
{
  PointCloud out;
  out.precision = cloud.precision;
  out.points.reserve(cloud.points.size());
  for (const auto& c : cloud.points)
    out.points.push_back({int32_t(std::lround(c.x * s)), int32_t(std::lround(c.y * s)),
                          int32_t(std::lround(c.z * s))});
  out.canonicalize();
  out.original_count = out.points.size();
  return out;
}

PointCloud augment(const PointCloud& cloud, Rng& rng)
{
  return scale_cloud(cloud, rng.uniform(0.5, 1.0));
}

// ---------------------------------------------------------------------------

double loss_bce(std::span<const double> probs, std::span<const uint8_t> symbols)
{
  if (probs.size() != symbols.size())
    throw std::invalid_argument("probabilities and symbols differ in length");
  double bits = 0.0;
  for (size_t j = 0; j < probs.size(); ++j) {
    const double p = clamp_probability(probs[j]);
    bits -= symbols[j] ? std::log2(p) : std::log2(1.0 - p);
  }
  return bits;
}

LossValue loss_combined(std::span<const double> probs, std::span<const uint8_t> symbols,
                        std::span<const double> q, const FactorizedModel& model, double w)
{
  LossValue v;
  v.bce = loss_bce(probs, symbols);
  for (size_t j = 0; j < q.size(); ++j)
    v.feature_rate += factorized_rate(q[j], model.scale(j % model.channels()));
  v.total = v.bce + w * v.feature_rate;
  return v;
}

double loss_mse(std::span<const std::array<double, 3>> adjusted,
                std::span<const std::array<double, 3>> truth)
{
  if (adjusted.empty() || adjusted.size() != truth.size())
    throw std::invalid_argument("loss_mse needs equal, non-empty point sets");
  double sum = 0.0;
  for (size_t j = 0; j < adjusted.size(); ++j)
    for (size_t a = 0; a < 3; ++a) {
      const double d = adjusted[j][a] - truth[j][a];
      sum += d * d;
    }
  return sum / double(adjusted.size());
}

// ---------------------------------------------------------------------------

std::vector<ManifestEntry> parse_manifest(std::string_view text)
{
  std::vector<ManifestEntry> out;
  std::istringstream in{std::string(text)};
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::string kind;
    if (!(fields >> kind))
      continue;
    ManifestEntry e;
    auto k = parse_cloud_kind(kind);
    std::string extra;
    if (!k || !(fields >> e.precision >> e.seed) || (fields >> extra))
      throw std::invalid_argument("manifest line " + std::to_string(line_no)
                                  + ": expected 'kind N seed'");
    if (e.precision < 4 || e.precision > 10)
      throw std::invalid_argument("manifest line " + std::to_string(line_no)
                                  + ": N must be in [4, 10]");
    e.kind = *k;
    out.push_back(e);
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

std::vector<PointCloud> synthesize(std::span<const ManifestEntry> entries)
{
  std::vector<PointCloud> out;
  out.reserve(entries.size());
  for (const auto& e : entries)
    out.push_back(synth_cloud(e.kind, e.precision, e.seed));
  return out;
}

double schedule_lr(const Schedule& s, int64_t step, int64_t total_steps)
{
  if (total_steps <= 1)
    return s.lr_start;
  const double t = std::clamp(double(step) / double(total_steps - 1), 0.0, 1.0);
  return s.lr_end + 0.5 * (s.lr_start - s.lr_end) * (1.0 + std::cos(kPi * t));
}

double rate_weight(int64_t step, int64_t total_steps)
{
  const double ramp = std::max(1.0, double(total_steps) / 3.0);
  return std::min(1.0, double(step) / ramp);
}

// ---------------------------------------------------------------------------

namespace {

// Seeds the BCE gradient of `p` (scaled) and returns the bits.
double seed_bce(Tape& tape, Tape::Var p, const std::vector<uint8_t>& symbols, double scale,
                bool backprop)
{
  const Matrix& pv = tape.value(p);
  Matrix g(pv.rows(), 1);
  double bits = 0.0;
  for (Eigen::Index j = 0; j < pv.rows(); ++j) {
    if (!std::isfinite(pv(j, 0)))
      throw DivergenceError("non-finite probability");
    const double pc = clamp_probability(pv(j, 0));
    const bool o = symbols[size_t(j)] != 0;
    bits -= o ? std::log2(pc) : std::log2(1.0 - pc);
    g(j, 0) = scale * (o ? -1.0 / (pc * std::numbers::ln2) : 1.0 / ((1.0 - pc) * std::numbers::ln2));
  }
  if (backprop)
    tape.seed(p, g);
  return bits;
}

struct SampleLoss {
  LossValue sum;
  double count = 0.0;  // normaliser: symbols or points
};

class Step {
public:
  Step(ArchId arch, std::vector<NetworkParams>& nets, const TrainOptions& opt)
    : arch_(arch), nets_(nets), opt_(opt)
  {
  }

  // Forward (and backward when grads is non-null) over one cloud. Gradients
  // are scaled by grad_scale / count.
  SampleLoss run(const PointCloud& cloud, std::vector<NetworkParams>* grads, double w,
                 Rng* noise, double grad_scale)
  {
    const auto pyr = build_pyramid(cloud);
    if (arch_ == ArchId::SopaPosition)
      return position(cloud.precision, pyr, grads, grad_scale);
    const int n = cloud.precision;
    const int lo = std::max(opt_.min_scale, is_slne() ? 2 : 1);
    SampleLoss out;
    for (int i = lo; i <= n; ++i)
      out.count += 8.0 * double(pyr[size_t(i - 1)]->size());
    if (out.count == 0)
      return out;
    const double scale = grad_scale / out.count;
    const bool backprop = grads != nullptr;

    Tape tape;
    NetEval ev(tape, nets_[0], backprop ? &(*grads)[0] : nullptr);
    std::optional<NetEval> ev_dec;
    if (is_slne())
      ev_dec.emplace(tape, nets_[1], backprop ? &(*grads)[1] : nullptr);

    for (int i = lo; i <= n; ++i) {
      const CoordSetPtr& truth = pyr[size_t(i)];
      switch (arch_) {
      case ArchId::OneStageSopa: {
        auto g = one_stage_graph(ev, one_stage_layout(nets_[0]),
                                 ev.input(SparseTensor::geometry(i - 1, pyr[size_t(i - 1)])));
        out.sum.bce += seed_bce(tape, g.probs, contains(*truth, *g.children), scale, backprop);
        break;
      }
      case ArchId::MultiStageSopa3:
      case ArchId::MultiStageSopa8: {
        auto g = multi_stage_graph(ev, multi_stage_layout(nets_[0]), arrangement_for(nets_[0]),
                                   ev.input(SparseTensor::geometry(i - 1, pyr[size_t(i - 1)])),
                                   truth_symbols(*truth));
        for (size_t s = 0; s < g.probs.size(); ++s)
          out.sum.bce += seed_bce(tape, g.probs[s], g.symbols[s], scale, backprop);
        break;
      }
      default:
        slne(tape, ev, *ev_dec, pyr, i, grads, w, noise, scale, out.sum);
        break;
      }
    }
    out.sum.total = out.sum.bce + w * out.sum.feature_rate;
    if (backprop)
      tape.backward();
    return out;
  }

  // Feature values seen by backward passes since the last take.
  std::vector<std::vector<double>> take_feature_samples() { return std::move(feature_samples_); }

private:
  bool is_slne() const { return arch_ == ArchId::SlneEncoder || arch_ == ArchId::SlneDecoder; }

  static std::vector<uint8_t> contains(const CoordSet& truth, const CoordSet& cand)
  {
    std::vector<uint8_t> bits(cand.size());
    for (size_t j = 0; j < cand.size(); ++j)
      bits[j] = truth.contains(cand[j]) ? 1 : 0;
    return bits;
  }

  void slne(Tape& tape, NetEval& ee, NetEval& ed, const std::vector<CoordSetPtr>& pyr, int i,
            std::vector<NetworkParams>* grads, double w, Rng* noise, double scale,
            LossValue& sum)
  {
    const auto& enc = nets_[0];
    const auto& dec = nets_[1];
    TensorVar y = slne_encoder_graph(ee, slne_encoder_layout(enc),
                                     ee.input(SparseTensor::geometry(i, pyr[size_t(i)])));
    const Matrix& yv = tape.value(y.var);
    Matrix c(yv.rows(), yv.cols());
    if (!yv.allFinite())
      throw DivergenceError("non-finite features");
    for (Eigen::Index k = 0; k < yv.size(); ++k)
      c.data()[k] = noise ? noise->uniform(-0.5, 0.5)
                          : double(quantize_feature(yv.data()[k])) - yv.data()[k];
    Tape::Var yq = tape.add_constant(y.var, c);
    const Matrix& qv = tape.value(yq);

    Matrix gq(qv.rows(), qv.cols());
    feature_samples_.resize(size_t(qv.cols()));
    for (Eigen::Index col = 0; col < qv.cols(); ++col) {
      const double b = std::exp(std::clamp(enc.entropy_log_scales[size_t(col)],
                                           FactorizedModel::kMinLogScale,
                                           FactorizedModel::kMaxLogScale));
      for (Eigen::Index r = 0; r < qv.rows(); ++r) {
        const auto g = factorized_rate_gradient(qv(r, col), b);
        sum.feature_rate += g.rate;
        gq(r, col) = w * scale * g.d_q;
        if (grads)
          feature_samples_[size_t(col)].push_back(qv(r, col));
      }
    }
    if (grads)
      tape.seed(yq, gq);

    const auto dl = slne_decoder_layout(dec);
    TensorVar f = slne_feature_graph(ed, dl, {yq, y.coords, y.scale}, pyr[size_t(i - 1)]);
    auto g = one_stage_graph(ed, dl.sopa, f);
    sum.bce += seed_bce(tape, g.probs, contains(*pyr[size_t(i)], *g.children), scale,
                        grads != nullptr);
  }

  SampleLoss position(int n, const std::vector<CoordSetPtr>& pyr,
                      std::vector<NetworkParams>* grads, double grad_scale)
  {
    const int m = n - opt_.position_gap;
    if (m < 1)
      throw std::invalid_argument("position training needs N - gap >= 1");
    const CoordSetPtr& coarse = pyr[size_t(m)];
    const auto& fine = pyr[size_t(n)];
    NeighborIndex idx(fine->coords());
    Tape tape;
    NetEval ev(tape, nets_[0], grads ? &(*grads)[0] : nullptr);
    Tape::Var o = position_graph(ev, position_layout(nets_[0]),
                                 ev.input(SparseTensor::geometry(m, coarse)));
    const Matrix& ov = tape.value(o);
    SampleLoss out;
    out.count = double(coarse->size());
    Matrix g(ov.rows(), 3);
    const double mult = double(1 << opt_.position_gap);
    for (Eigen::Index r = 0; r < ov.rows(); ++r) {
      const Coord3 c = (*coarse)[size_t(r)];
      const std::array<double, 3> adj{c.x * mult + ov(r, 0), c.y * mult + ov(r, 1),
                                      c.z * mult + ov(r, 2)};
      const Coord3 t = (*fine)[idx.nearest(adj).index];
      const double d[3] = {adj[0] - t.x, adj[1] - t.y, adj[2] - t.z};
      for (int a = 0; a < 3; ++a) {
        out.sum.mse += d[a] * d[a];
        g(r, a) = 2.0 * d[a] * grad_scale / out.count;
      }
    }
    out.sum.total = out.sum.mse;
    if (grads) {
      tape.seed(o, g);
      tape.backward();
    }
    return out;
  }

  ArchId arch_;
  std::vector<std::vector<double>> feature_samples_;
  std::vector<NetworkParams>& nets_;
  const TrainOptions& opt_;
};

// He-uniform, then every residual merge zeroed (IRN units start as the
// identity) and output heads scaled down so initial probabilities sit near
// 0.5.
void init_for_training(NetworkParams& net, uint64_t seed)
{
  init_he_uniform(net, seed);
  std::vector<const DfaLayout*> dfas;
  std::vector<int> heads;
  OneStageLayout os;
  MultiStageLayout ms;
  SlneEncoderLayout se;
  SlneDecoderLayout sd;
  PositionLayout pl;
  switch (net.arch) {
  case ArchId::OneStageSopa:
    os = one_stage_layout(net);
    dfas = {&os.dfa_parent, &os.dfa_child};
    heads = {os.ool.head};
    break;
  case ArchId::MultiStageSopa3:
  case ArchId::MultiStageSopa8:
    ms = multi_stage_layout(net);
    dfas = {&ms.dfa_parent};
    for (const auto& st : ms.stages) {
      dfas.push_back(&st.dfa);
      heads.push_back(st.ool.head);
    }
    break;
  case ArchId::SlneEncoder:
    se = slne_encoder_layout(net);
    dfas = {&se.dfa1, &se.dfa2, &se.dfa3};
    break;
  case ArchId::SlneDecoder:
    sd = slne_decoder_layout(net);
    dfas = {&sd.dfa, &sd.sopa.dfa_parent, &sd.sopa.dfa_child};
    heads = {sd.sopa.ool.head};
    break;
  case ArchId::SopaPosition:
    pl = position_layout(net);
    dfas = {&pl.dfa};
    heads = {pl.ool.head};
    break;
  }
  for (const auto* d : dfas)
    for (const auto& unit : *d)
      net.layers[size_t(unit.merge)].set_zero();
  for (int h : heads)
    for (auto& w : net.layers[size_t(h)].weights)
      w *= 0.1;
}

std::vector<NetworkParams> initial_nets(ArchId arch, const TrainOptions& opt)
{
  auto make = [&](ArchId a, uint64_t stream) {
    auto net = make_network(a, opt.kernel_size, opt.channels);
    init_for_training(net, derive_seed(opt.init_seed, stream));
    return net;
  };
  if (arch == ArchId::SlneEncoder || arch == ArchId::SlneDecoder)
    return {make(ArchId::SlneEncoder, 0), make(ArchId::SlneDecoder, 1)};
  return {make(arch, 0)};
}

void add_mean(LossValue& acc, const SampleLoss& s)
{
  if (s.count == 0)
    return;
  acc.total += s.sum.total / s.count;
  acc.bce += s.sum.bce / s.count;
  acc.feature_rate += s.sum.feature_rate / s.count;
  acc.mse += s.sum.mse / s.count;
}

void scale_loss(LossValue& v, double f)
{
  v.total *= f;
  v.bce *= f;
  v.feature_rate *= f;
  v.mse *= f;
}


// Log-scale minimising the summed Laplace rate of `values` (golden section;
// the rate is unimodal in the log-scale).
double fit_log_scale(std::span<const double> values)
{
  auto cost = [&](double s) {
    const double b = std::exp(s);
    double bits = 0.0;
    for (double q : values)
      bits += factorized_rate(q, b);
    return bits;
  };
  constexpr double phi = 0.6180339887498949;
  double lo = FactorizedModel::kMinLogScale, hi = FactorizedModel::kMaxLogScale;
  double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
  double f1 = cost(x1), f2 = cost(x2);
  while (hi - lo > 1e-3) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = cost(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = cost(x2);
    }
  }
  return 0.5 * (lo + hi);
}

void fit_scales(NetworkParams& enc, const std::vector<std::vector<double>>& samples)
{
  for (size_t c = 0; c < samples.size() && c < enc.entropy_log_scales.size(); ++c)
    if (!samples[c].empty())
      enc.entropy_log_scales[c] = fit_log_scale(samples[c]);
}

}  // namespace

LossValue evaluate_loss(ArchId arch, std::span<const NetworkParams> nets,
                        std::span<const PointCloud> data, const TrainOptions& options)
{
  std::vector<NetworkParams> copy(nets.begin(), nets.end());
  Step step(arch, copy, options);
  LossValue acc;
  for (const auto& cloud : data)
    add_mean(acc, step.run(cloud, nullptr, 1.0, nullptr, 0.0));
  if (!data.empty())
    scale_loss(acc, 1.0 / double(data.size()));
  return acc;
}

TrainResult train(ArchId arch, std::span<const PointCloud> data, const Schedule& schedule,
                  const TrainOptions& options)
{
  if (schedule.batch < 1 || schedule.epochs < 0)
    throw std::invalid_argument("invalid schedule");
  TrainResult res;
  res.nets = initial_nets(arch, options);
  if (data.empty() || schedule.epochs == 0)
    return res;
  if (schedule.eval_initial)
    res.log.push_back({0, evaluate_loss(arch, res.nets, data, options), 0.0});

  const int64_t per_epoch = (int64_t(data.size()) + schedule.batch - 1) / schedule.batch;
  const int64_t total = per_epoch * schedule.epochs;
  std::vector<AdamState> adam(res.nets.size());
  Step step(arch, res.nets, options);
  int64_t t = 0;
  for (int epoch = 1; epoch <= schedule.epochs; ++epoch) {
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t(0));
    Rng shuffle(derive_seed(schedule.seed, uint64_t(epoch)));
    for (size_t k = order.size(); k > 1; --k)
      std::swap(order[k - 1], order[size_t(shuffle.below(k))]);

    LossValue epoch_loss;
    double lr = 0.0;
    for (size_t start = 0; start < order.size(); start += size_t(schedule.batch)) {
      const size_t stop = std::min(order.size(), start + size_t(schedule.batch));
      const double w = rate_weight(t, total);
      std::vector<NetworkParams> grads;
      for (const auto& n : res.nets)
        grads.push_back(zeros_like(n));
      for (size_t k = start; k < stop; ++k) {
        const size_t idx = order[k];
        Rng rng(derive_seed(schedule.seed, uint64_t(epoch) * 1000003 + idx));
        const PointCloud cloud = schedule.augment ? augment(data[idx], rng) : data[idx];
        SampleLoss s;
        try {
          s = step.run(cloud, &grads, w, &rng, 1.0 / double(stop - start));
        } catch (const DivergenceError&) {
          s.sum.total = std::numeric_limits<double>::quiet_NaN();
        }
        if (!std::isfinite(s.sum.total))
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch)
                                + ", sample " + std::to_string(idx));
        add_mean(epoch_loss, s);
      }
      lr = schedule_lr(schedule, t, total);
      for (size_t k = 0; k < res.nets.size(); ++k) {
        for (auto block : parameter_blocks(grads[k]))
          for (double g : block)
            if (!std::isfinite(g))
              throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch));
        adam_step(res.nets[k], grads[k], adam[k], lr);
      }
      if (arch == ArchId::SlneEncoder || arch == ArchId::SlneDecoder)
        fit_scales(res.nets[0], step.take_feature_samples());
      ++t;
    }
    scale_loss(epoch_loss, 1.0 / double(data.size()));
    res.log.push_back({epoch, epoch_loss, lr});
  }
  if (arch == ArchId::SopaPosition)
    fit_position_scales(res.nets[0], data, options.position_gap);
  else if (arch == ArchId::SlneEncoder || arch == ArchId::SlneDecoder)
    fit_feature_scales(res.nets[0], data);
  return res;
}

void fit_position_scales(NetworkParams& net, std::span<const PointCloud> data, int gap)
{
  std::array<double, 3> abs_sum{};
  size_t count = 0;
  for (const auto& cloud : data) {
    const int m = cloud.precision - gap;
    if (m < 1)
      continue;
    const auto pyr = build_pyramid(cloud);
    auto pred = sopa_position(SparseTensor::geometry(m, pyr[size_t(m)]), net);
    for (Eigen::Index r = 0; r < pred.offsets.rows(); ++r)
      for (Eigen::Index a = 0; a < 3; ++a)
        abs_sum[size_t(a)] += std::abs(double(quantize_feature(pred.offsets(r, a))));
    count += size_t(pred.offsets.rows());
  }
  if (count == 0)
    return;
  net.entropy_log_scales.resize(3);
  for (size_t a = 0; a < 3; ++a)
    net.entropy_log_scales[a] = std::log(std::max(abs_sum[a] / double(count), 0.05));
}

void fit_feature_scales(NetworkParams& enc, std::span<const PointCloud> data)
{
  std::vector<std::vector<double>> samples(size_t(enc.channels));
  for (const auto& cloud : data) {
    const auto pyr = build_pyramid(cloud);
    for (int i = 2; i <= cloud.precision; ++i) {
      const auto e = slne_encode(SparseTensor::geometry(i, pyr[size_t(i)]), enc);
      for (size_t k = 0; k < e.q.size(); ++k)
        samples[k % samples.size()].push_back(double(e.q[k]));
    }
  }
  fit_scales(enc, samples);
}

void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> log)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "epoch,loss,bce,feature_rate,mse,lr\n";
  out.precision(10);
  for (const auto& e : log)
    out << e.epoch << ',' << e.loss.total << ',' << e.loss.bce << ',' << e.loss.feature_rate
        << ',' << e.loss.mse << ',' << e.lr << '\n';
}

}  // namespace spcg
