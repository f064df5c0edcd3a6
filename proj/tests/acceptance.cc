// Acceptance gate: runs the ten criteria and prints one PASS/FAIL line per
// criterion. Exit status is non-zero when any criterion fails.

#include "oracles.h"

#include "spcg/codec.h"
#include "spcg/conv.h"
#include "spcg/kernel_map.h"
#include "spcg/metrics.h"
#include "spcg/training.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>

using namespace spcg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args)
{
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& s)
{
  std::fprintf(stderr, "  .. %s\n", s.c_str());
  std::fflush(stderr);
}

// ---------------------------------------------------------------------------
// Shared configuration

constexpr int kDenseN = 6;
constexpr int kTrainClouds = 32;
constexpr int kHeldOut = 8;
constexpr int kChannels = 8;
constexpr int kOccupancyEpochs = 40;  // One-Stage, 8-Stage and the SLNE pair
constexpr double kOccupancyLr = 3e-3;
constexpr int kOccupancyBatch = 1;
constexpr int kScanN = 7;
constexpr int kPositionEpochs = 30;
constexpr double kPositionLr = 1e-2;
constexpr int kPositionBatch = 8;

std::vector<PointCloud> dense_set(int count, uint64_t seed0)
{
  const CloudKind kinds[] = {CloudKind::SphereShell, CloudKind::BoxSurface, CloudKind::PlanePatch,
                             CloudKind::Union};
  std::vector<PointCloud> out;
  for (int k = 0; k < count; ++k)
    out.push_back(synth_cloud(kinds[k % 4], kDenseN, seed0 + uint64_t(k)));
  return out;
}

std::vector<PointCloud> scan_set(int count, uint64_t seed0)
{
  std::vector<PointCloud> out;
  for (int k = 0; k < count; ++k)
    out.push_back(synth_cloud(CloudKind::LineScan, kScanN, seed0 + uint64_t(k)));
  return out;
}

Schedule schedule(int epochs, double lr, int batch)
{
  Schedule s;
  s.epochs = epochs;
  s.lr_start = lr;
  s.batch = batch;
  s.eval_initial = false;
  return s;
}

TrainOptions options(int kernel = 3)
{
  TrainOptions o;
  o.channels = kChannels;
  o.kernel_size = kernel;
  return o;
}

// Trained networks, built on first use.
struct Trained {
  NetworkParams one_stage, multi8, slne_enc, slne_dec, position;
  double sopa_train_seconds = 0.0;
  double slne_train_seconds = 0.0;
  double position_train_seconds = 0.0;

  ModelSet models() const
  {
    ModelSet m;
    m.add(one_stage);
    m.add(multi8);
    m.add(slne_enc);
    m.add(slne_dec);
    m.add(position);
    return m;
  }
};

const Trained& trained()
{
  static std::optional<Trained> t;
  if (t)
    return *t;
  t.emplace();
  const auto data = dense_set(kTrainClouds, 1000);
  const Schedule occ = schedule(kOccupancyEpochs, kOccupancyLr, kOccupancyBatch);
  auto t0 = Clock::now();
  t->one_stage = train(ArchId::OneStageSopa, data, occ, options()).nets[0];
  note(fmt("trained one-stage in %.0f s", seconds_since(t0)));
  auto t1 = Clock::now();
  t->multi8 = train(ArchId::MultiStageSopa8, data, occ, options()).nets[0];
  note(fmt("trained 8-stage in %.0f s", seconds_since(t1)));
  t->sopa_train_seconds = seconds_since(t0);
  t0 = Clock::now();
  auto slne = train(ArchId::SlneEncoder, data, occ, options()).nets;
  t->slne_enc = slne[0];
  t->slne_dec = slne[1];
  t->slne_train_seconds = seconds_since(t0);
  note(fmt("trained SLNE pair in %.0f s", t->slne_train_seconds));
  t0 = Clock::now();
  t->position = train(ArchId::SopaPosition, scan_set(kTrainClouds, 5000),
                      schedule(kPositionEpochs, kPositionLr, kPositionBatch), options(5))
                  .nets[0];
  t->position_train_seconds = seconds_since(t0);
  note(fmt("trained position net in %.0f s", t->position_train_seconds));
  return *t;
}

ModelSet random_models(uint64_t seed)
{
  ModelSet m;
  uint64_t s = seed;
  for (auto a : {ArchId::OneStageSopa, ArchId::MultiStageSopa3, ArchId::MultiStageSopa8,
                 ArchId::SlneEncoder, ArchId::SlneDecoder}) {
    auto net = make_network(a, 3, kChannels);
    init_he_uniform(net, s++);
    m.add(std::move(net));
  }
  auto pos = make_network(ArchId::SopaPosition, 5, kChannels);
  init_he_uniform(pos, s);
  m.add(std::move(pos));
  return m;
}

double mean_bpp(const std::vector<PointCloud>& clouds, const ModelSet& models, LosslessArch arch)
{
  double sum = 0.0;
  for (const auto& c : clouds) {
    CodecConfig cfg;
    cfg.precision = c.precision;
    cfg.lossless_arch = arch;
    sum += rate_report(encode(c, cfg, models).bytes).bpp;
  }
  return sum / double(clouds.size());
}

// The `limit` points nearest to a random anchor, a local patch of the
// surface that keeps large-N clouds cheap.
PointCloud crop(const PointCloud& pc, size_t limit, Rng& rng)
{
  if (pc.points.size() <= limit)
    return pc;
  const Coord3 a = pc.points[size_t(rng.below(pc.points.size()))];
  std::vector<std::pair<int64_t, size_t>> d;
  d.reserve(pc.points.size());
  for (size_t i = 0; i < pc.points.size(); ++i) {
    const int64_t dx = pc.points[i].x - a.x, dy = pc.points[i].y - a.y, dz = pc.points[i].z - a.z;
    d.push_back({dx * dx + dy * dy + dz * dz, i});
  }
  std::nth_element(d.begin(), d.begin() + std::ptrdiff_t(limit), d.end());
  PointCloud out;
  out.precision = pc.precision;
  for (size_t k = 0; k < limit; ++k)
    out.points.push_back(pc.points[d[k].second]);
  out.canonicalize();
  out.original_count = out.points.size();
  return out;
}

// ---------------------------------------------------------------------------
// 1 and 2 share the same round trips.

struct RoundTripStats {
  int trips = 0;
  int exact = 0;
  double seconds = 0.0;
  double worst_gap = 0.0;  // max |payload - ideal| bits over all scales
  int scales = 0;
  bool done = false;
};

RoundTripStats& round_trips()
{
  static RoundTripStats st;
  if (st.done)
    return st;
  st.done = true;
  const ModelSet trained_set = trained().models();
  const ModelSet random_set = random_models(77);
  const LosslessArch all[] = {LosslessArch::OneStage, LosslessArch::MultiStage3,
                              LosslessArch::MultiStage8, LosslessArch::SlneOneStage};
  const LosslessArch trained_archs[] = {LosslessArch::OneStage, LosslessArch::MultiStage8,
                                        LosslessArch::SlneOneStage};
  Rng rng(2024);
  const auto t0 = Clock::now();
  for (int k = 0; k < 100; ++k) {
    const int n = 6 + k % 5;
    const auto kind = CloudKind(k % 5);
    const PointCloud cloud = crop(synth_cloud(kind, n, 300 + uint64_t(k)), 3000, rng);
    for (int variant = 0; variant < 2; ++variant) {
      CodecConfig cfg;
      cfg.precision = n;
      cfg.lossless_arch = variant == 0 ? trained_archs[k % 3] : all[k % 4];
      const ModelSet& models = variant == 0 ? trained_set : random_set;
      auto enc = encode(cloud, cfg, models);
      auto dec = decode(enc.bytes, models);
      ++st.trips;
      if (dec.points == cloud.points)
        ++st.exact;
      std::map<int, std::pair<double, double>> per_scale;
      for (const auto& c : enc.stats) {
        per_scale[c.scale].first += double(c.payload_bits);
        per_scale[c.scale].second += c.ideal_bits;
      }
      for (const auto& [s, v] : per_scale) {
        st.worst_gap = std::max(st.worst_gap, std::abs(v.first - v.second));
        ++st.scales;
      }
    }
  }
  st.seconds = seconds_since(t0);
  return st;
}

Outcome criterion1()
{
  const auto& st = round_trips();
  const bool pass = st.exact == st.trips && st.trips == 200 && st.seconds <= 300.0;
  return {pass, fmt("%d/%d exact round trips (100 clouds, N 6-10, trained and random models) in "
                    "%.1f s, budget 300 s",
                    st.exact, st.trips, st.seconds)};
}

Outcome criterion2()
{
  const auto& st = round_trips();
  return {st.worst_gap <= 64.0 && st.scales > 0,
          fmt("worst |coded - ideal| = %.2f bits over %d scale chunks, tolerance 64", st.worst_gap,
              st.scales)};
}

// ---------------------------------------------------------------------------

Outcome criterion3()
{
  Rng rng(3);
  int failures = 0;
  const auto arrs = {GroupingArrangement::make(GroupingVariant::OneStage),
                     GroupingArrangement::make(GroupingVariant::ThreeStage),
                     GroupingArrangement::make(GroupingVariant::EightStage)};
  for (int trial = 0; trial < 10000; ++trial) {
    const int scale = 1 + int(rng.below(8));
    const uint64_t cells = uint64_t(1) << (3 * scale);
    const auto pts = oracle::random_coords(rng, 1 + rng.below(std::min<uint64_t>(60, cells)),
                                           1 << scale);
    auto shuffled = pts;
    for (size_t k = shuffled.size(); k > 1; --k)
      std::swap(shuffled[k - 1], shuffled[size_t(rng.below(k))]);
    auto set = CoordSet::unique_of(pts);
    auto set2 = CoordSet::unique_of(shuffled);
    bool ok = true;
    // canonical order
    for (size_t i = 1; i < set->size(); ++i)
      ok &= set->key(i - 1) < set->key(i);
    ok &= std::equal(set->coords().begin(), set->coords().end(), set2->coords().begin(),
                     set2->coords().end());
    // superset: up(down(x)) contains x
    auto t = SparseTensor::geometry(scale, set);
    auto down = voxel_downscale_geom(t);
    auto up = voxel_upscale_geom(down);
    for (const auto& c : set->coords())
      ok &= up.coords().contains(c);
    ok &= up.size() == 8 * down.size();
    // partition: every child belongs to exactly one parent
    std::map<std::tuple<int, int, int>, int> hits;
    for (const auto& c : up.coords().coords())
      ++hits[{c.x >> 1, c.y >> 1, c.z >> 1}];
    ok &= hits.size() == down.size();
    for (const auto& [k, v] : hits)
      ok &= v == 8;
    for (const auto& p : down.coords().coords())
      ok &= hits.count({p.x, p.y, p.z}) == 1;
    // stages partition the eight offsets
    for (const auto& arr : arrs) {
      int seen = 0;
      for (int s = 0; s < arr.stage_count(); ++s)
        for (const auto& o : arr.stage(s)) {
          seen |= 1 << offset_rank(o);
          ok &= arr.stage_index(o) == s;
        }
      ok &= seen == 0xFF;
    }
    failures += ok ? 0 : 1;
  }
  return {failures == 0, fmt("%d/10000 randomized instances violated an invariant", failures)};
}

Outcome criterion4()
{
  Rng rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int kind = trial % 5;  // sconv k=1,3,5, down2, up2
    const int scale = kind == 3 ? 4 : 3 + int(rng.below(2));
    const int extent = 1 << scale;
    const int cin = 1 + int(rng.below(4)), cout = 1 + int(rng.below(4));
    auto set = CoordSet::unique_of(oracle::random_coords(rng, 1 + rng.below(250), extent));
    SparseTensor t(scale, set, oracle::random_matrix(rng, Eigen::Index(set->size()), cin));
    double d = 0.0;
    if (kind < 3) {
      auto p = ConvLayerParams::zeros(Stride::None, 2 * kind + 1, cin, cout);
      oracle::randomize(p, rng);
      d = oracle::max_abs_diff(sconv_forward(t, p).features(), oracle::dense_sconv(t, p, extent));
    } else if (kind == 3) {
      auto p = ConvLayerParams::zeros(Stride::Down2, 2, cin, cout);
      oracle::randomize(p, rng);
      auto out = sconv_down2_forward(t, p);
      d = oracle::max_abs_diff(out.features(),
                               oracle::dense_down2(t, p, out.coords().coords(), extent));
    } else {
      auto p = ConvLayerParams::zeros(Stride::Up2, 2, cin, cout);
      oracle::randomize(p, rng);
      auto out = tsconv_up2_forward(t, p);
      d = oracle::max_abs_diff(out.features(),
                               oracle::dense_up2(t, p, out.coords().coords(), extent));
    }
    worst = std::max(worst, d);
  }
  return {worst <= 1e-12, fmt("max abs diff %.3g over 200 cases on grids <= 16^3, tolerance 1e-12",
                              worst)};
}

// Loss = sum(w .* y); returns the worst FD relative error over inputs and
// parameters.
double grad_check_draw(Rng& rng)
{
  double worst = 0.0;
  auto check = [&](const std::function<Tape::Var(Tape&, Tape::Var)>& op, Matrix x,
                   Eigen::Index out_rows, Eigen::Index out_cols) {
    Matrix w = oracle::random_matrix(rng, out_rows, out_cols);
    auto run = [&](Matrix* gx) {
      Tape tape;
      auto xv = tape.input(x, gx != nullptr);
      auto y = op(tape, xv);
      const double l = (tape.value(y).array() * w.array()).sum();
      if (gx) {
        tape.seed(y, w);
        tape.backward();
        *gx = tape.grad(xv);
      }
      return l;
    };
    Matrix g;
    run(&g);
    worst = std::max(worst, oracle::fd_relative_error({x.data(), size_t(x.size())},
                                                      {g.data(), size_t(g.size())},
                                                      [&] { return run(nullptr); }));
  };
  const Matrix x = oracle::random_matrix(rng, 6, 4);
  const Matrix other = oracle::random_matrix(rng, 6, 4);
  check([](Tape& t, Tape::Var v) { return t.relu(v); }, x, 6, 4);
  check([](Tape& t, Tape::Var v) { return t.sigmoid(v); }, x, 6, 4);
  check([&](Tape& t, Tape::Var v) { return t.add(v, t.input(other)); }, x, 6, 4);
  check([](Tape& t, Tape::Var v) { return t.concat(t.relu(v), v); }, x, 6, 8);
  check([](Tape& t, Tape::Var v) { return t.gather(v, {5, 0, 0, 3}); }, x, 4, 4);
  check([](Tape& t, Tape::Var v) { return t.merge_rows(v, t.sigmoid(v), {0, -2, 4, -1}); }, x, 4,
        4);
  check([&](Tape& t, Tape::Var v) { return t.add_constant(v, other); }, x, 6, 4);

  for (Stride s : {Stride::None, Stride::Down2, Stride::Up2}) {
    auto set = CoordSet::unique_of(oracle::random_coords(rng, 20, 8));
    SparseTensor t(3, set, oracle::random_matrix(rng, Eigen::Index(set->size()), 2));
    auto p = ConvLayerParams::zeros(s, 3, 2, 3);
    oracle::randomize(p, rng);
    std::shared_ptr<const KernelMap> map;
    size_t rows = 0;
    if (s == Stride::None) {
      map = t.coords().submanifold_map(3);
      rows = t.size();
    } else if (s == Stride::Down2) {
      auto parents = parents_of(t.coords());
      map = std::make_shared<const KernelMap>(build_down2_map(t.coords(), *parents));
      rows = parents->size();
    } else {
      auto children = children_of(t.coords());
      map = std::make_shared<const KernelMap>(build_up2_map(t.coords(), *children));
      rows = children->size();
    }
    Matrix w = oracle::random_matrix(rng, Eigen::Index(rows), 3);
    Matrix xin = t.features();
    auto grads = ConvLayerParams::zeros(s, 3, 2, 3);
    auto loss = [&](ConvLayerParams* g, Matrix* gx) {
      Tape tape;
      auto xv = tape.input(xin, gx != nullptr);
      auto y = tape.sigmoid(tape.conv(xv, map, p, g));
      const double l = (tape.value(y).array() * w.array()).sum();
      if (g || gx) {
        tape.seed(y, w);
        tape.backward();
        if (gx)
          *gx = tape.grad(xv);
      }
      return l;
    };
    Matrix gx;
    loss(&grads, &gx);
    auto f = [&] { return loss(nullptr, nullptr); };
    for (size_t k = 0; k < p.weights.size(); ++k)
      worst = std::max(worst, oracle::fd_relative_error(
                                {p.weights[k].data(), size_t(p.weights[k].size())},
                                {grads.weights[k].data(), size_t(grads.weights[k].size())}, f));
    worst = std::max(worst, oracle::fd_relative_error({p.bias.data(), size_t(p.bias.size())},
                                                      {grads.bias.data(), size_t(grads.bias.size())},
                                                      f));
    worst = std::max(worst, oracle::fd_relative_error({xin.data(), size_t(xin.size())},
                                                      {gx.data(), size_t(gx.size())}, f));
  }
  return worst;
}

Outcome criterion5()
{
  Rng rng(5);
  double worst = 0.0;
  for (int draw = 0; draw < 50; ++draw)
    worst = std::max(worst, grad_check_draw(rng));
  return {worst <= 1e-4, fmt("worst relative error %.3g over 50 draws of 10 layer kinds, "
                             "tolerance 1e-4",
                             worst)};
}

// ---------------------------------------------------------------------------

struct HeldOut {
  std::vector<PointCloud> clouds;
  double baseline = 0.0;
  double one_stage = 0.0;
  double multi8 = 0.0;
};

const HeldOut& held_out()
{
  static std::optional<HeldOut> h;
  if (h)
    return *h;
  h.emplace();
  h->clouds = dense_set(kHeldOut, 9000);
  for (const auto& c : h->clouds)
    h->baseline += uniform_baseline_bpp(c) / double(h->clouds.size());
  const auto models = trained().models();
  h->one_stage = mean_bpp(h->clouds, models, LosslessArch::OneStage);
  h->multi8 = mean_bpp(h->clouds, models, LosslessArch::MultiStage8);
  return *h;
}

Outcome criterion6()
{
  const auto& t = trained();
  const auto& h = held_out();
  const bool pass = t.sopa_train_seconds <= 1800.0 && h.multi8 <= 0.85 * h.one_stage
                    && h.one_stage <= 0.7 * h.baseline && h.multi8 <= 0.7 * h.baseline;
  return {pass, fmt("held-out bpp: 8-stage %.4f, one-stage %.4f (ratio %.3f, need <= 0.85), "
                    "p=0.5 baseline %.4f (need both <= %.4f); training %.0f s of 1800",
                    h.multi8, h.one_stage, h.multi8 / h.one_stage, h.baseline, 0.7 * h.baseline,
                    t.sopa_train_seconds)};
}

Outcome criterion7()
{
  const auto& h = held_out();
  const double slne = mean_bpp(h.clouds, trained().models(), LosslessArch::SlneOneStage);
  return {slne < h.one_stage, fmt("held-out bpp: SLNE one-stage %.4f (occupancy + features), "
                                  "one-stage %.4f",
                                  slne, h.one_stage)};
}

Outcome criterion8()
{
  const auto& h = held_out();
  const auto models = trained().models();
  const int n = kDenseN;
  bool pass = true;
  std::string rows;
  for (const auto& cloud : h.clouds) {
    double prev_bpp = INFINITY, prev_psnr = INFINITY;
    const auto pyr = build_pyramid(cloud);
    for (int m = n - 1; m >= n - 3; --m) {
      CodecConfig cfg;
      cfg.mode = CodecMode::LossyDense;
      cfg.precision = n;
      cfg.m = m;
      auto bytes = encode(cloud, cfg, models).bytes;
      const double bpp = rate_report(bytes).bpp;
      const auto dec = decode(bytes, models);
      const auto q = evaluate(cloud, dec, bpp);
      // truncate to scale m and upscale with zero offsets
      PointCloud base;
      base.precision = n;
      for (const auto& c : pyr[size_t(m)]->coords())
        base.points.push_back(c * (1 << (n - m)));
      base.canonicalize();
      const auto qb = evaluate(cloud, base, bpp);
      const bool ok = bpp < prev_bpp && q.d1.psnr <= prev_psnr && q.d1.psnr >= qb.d1.psnr;
      pass &= ok;
      if (&cloud == &h.clouds.front() || !ok)
        rows += fmt(" [m=%d bpp %.3f D1 %.2f dB vs truncate %.2f dB]", m, bpp, q.d1.psnr,
                    qb.d1.psnr);
      prev_bpp = bpp;
      prev_psnr = q.d1.psnr;
    }
  }
  return {pass, fmt("%zu held-out clouds, m in {N-1,N-2,N-3}; first cloud:", h.clouds.size())
                  + rows};
}

Outcome criterion9()
{
  const auto& t = trained();
  const auto models = t.models();
  const auto clouds = scan_set(kHeldOut, 70000);
  const int gap = 2;
  double mse = 0.0, base = 0.0;
  size_t count = 0;
  bool counts_ok = true;
  for (const auto& cloud : clouds) {
    const int m = cloud.precision - gap;
    CodecConfig cfg;
    cfg.mode = CodecMode::LossySparse;
    cfg.precision = cloud.precision;
    cfg.m = m;
    const auto dec = decode(encode(cloud, cfg, models).bytes, models);
    const auto pyr = build_pyramid(cloud);
    counts_ok &= dec.points.size() == pyr[size_t(m)]->size();
    NeighborIndex idx(cloud.points);
    for (const auto& p : dec.points)
      mse += idx.nearest({double(p.x), double(p.y), double(p.z)}).sq_dist;
    for (const auto& c : pyr[size_t(m)]->coords()) {
      const Coord3 z = c * (1 << gap);
      base += idx.nearest({double(z.x), double(z.y), double(z.z)}).sq_dist;
    }
    count += dec.points.size();
  }
  mse /= double(count);
  base /= double(count);
  return {counts_ok && mse <= 0.8 * base,
          fmt("offset-adjusted MSE %.4f vs zero-offset %.4f (ratio %.3f, need <= 0.8); point "
              "counts %s",
              mse, base, mse / base, counts_ok ? "preserved" : "NOT preserved")};
}

Outcome criterion10()
{
  const auto models = trained().models();
  const auto& h = held_out();
  bool same_stream = true;
  for (auto arch : {LosslessArch::OneStage, LosslessArch::MultiStage8, LosslessArch::SlneOneStage}) {
    CodecConfig cfg;
    cfg.precision = kDenseN;
    cfg.lossless_arch = arch;
    same_stream &= encode(h.clouds[0], cfg, models).bytes == encode(h.clouds[0], cfg, models).bytes;
  }
  CodecConfig lossy;
  lossy.mode = CodecMode::LossyDense;
  lossy.precision = kDenseN;
  lossy.m = kDenseN - 2;
  same_stream &= encode(h.clouds[1], lossy, models).bytes == encode(h.clouds[1], lossy, models).bytes;

  const auto data = dense_set(8, 4242);
  Schedule s = schedule(2, kOccupancyLr, 4);
  bool same_model = true;
  for (auto arch : {ArchId::MultiStageSopa8, ArchId::SlneEncoder}) {
    auto a = train(arch, data, s, options());
    auto b = train(arch, data, s, options());
    for (size_t k = 0; k < a.nets.size(); ++k)
      same_model &= serialize_model(a.nets[k]) == serialize_model(b.nets[k]);
  }
  return {same_stream && same_model,
          fmt("bitstreams %s, model files %s", same_stream ? "identical" : "DIFFER",
              same_model ? "identical" : "DIFFER")};
}

}  // namespace

int main()
{
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
    {"lossless round trip", criterion1},
    {"rate equals entropy", criterion2},
    {"sparse tensor invariants", criterion3},
    {"convolution oracle", criterion4},
    {"gradient check", criterion5},
    {"training efficacy", criterion6},
    {"SLNE efficacy", criterion7},
    {"lossy RD monotonicity", criterion8},
    {"position efficacy", criterion9},
    {"determinism", criterion10},
  };
  int failed = 0;
  int index = 0;
  for (const auto& [name, run] : criteria) {
    ++index;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("[%s] criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", index, name,
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/10 criteria passed\n", 10 - failed);
  return failed == 0 ? 0 : 1;
}
