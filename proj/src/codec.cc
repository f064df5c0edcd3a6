#include "spcg/codec.h"

#include "spcg/entropy.h"
#include "spcg/sopa.h"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace spcg {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'C', 'G'};
constexpr uint8_t kHasCount = 0x80;

ArchId lossless_net(LosslessArch a)
{
  switch (a) {
  case LosslessArch::OneStage: return ArchId::OneStageSopa;
  case LosslessArch::MultiStage3: return ArchId::MultiStageSopa3;
  case LosslessArch::MultiStage8: return ArchId::MultiStageSopa8;
  case LosslessArch::SlneOneStage: return ArchId::SlneDecoder;
  }
  throw std::invalid_argument("unknown lossless architecture");
}

SparseTensor geometry(int scale, const CoordSetPtr& set)
{
  return SparseTensor::geometry(scale, set);
}

CoordSetPtr occupied(const std::vector<Coord3>& cand, const std::vector<uint8_t>& bits)
{
  std::vector<Coord3> out;
  for (size_t j = 0; j < cand.size(); ++j)
    if (bits[j])
      out.push_back(cand[j]);
  if (out.empty())
    throw FormatError("corrupt occupancy payload: empty scale");
  return CoordSet::from_coords(std::move(out));
}

FactorizedModel entropy_model(const NetworkParams& net)
{
  return FactorizedModel::from_log_scales(net.entropy_log_scales);
}

// Zero features on the root voxel stand in for the missing scale i-2.
SparseTensor root_features(int channels)
{
  Matrix f = Matrix::Zero(1, channels + 1);
  f(0, channels) = 1.0;
  return SparseTensor(0, CoordSet::from_coords({{0, 0, 0}}), std::move(f));
}

// Shared encoder/decoder state. The encoder fills chunks and stats, the
// decoder consumes chunks in the same order.
class Session {
public:
  Session(const CodecConfig& cfg, const ModelSet& models, std::vector<Chunk>* out,
          std::vector<ChunkStats>* stats, const std::vector<Chunk>* in)
    : cfg_(cfg), models_(models), out_(out), stats_(stats), in_(in)
  {
  }

  bool encoding() const { return out_ != nullptr; }

  // Codes scale i losslessly. `truth` is the scale-i set when encoding.
  CoordSetPtr lossless(int i, const std::vector<CoordSetPtr>& rec, const CoordSetPtr& truth)
  {
    const CoordSetPtr& prev = rec[size_t(i - 1)];
    switch (cfg_.lossless_arch) {
    case LosslessArch::OneStage:
      return occupancy(i, sopa_one_stage(geometry(i - 1, prev), models_.get(ArchId::OneStageSopa)),
                       truth);
    case LosslessArch::MultiStage3:
    case LosslessArch::MultiStage8:
      return multi_stage(i, prev, truth);
    case LosslessArch::SlneOneStage: {
      SparseTensor f = slne_features(i, rec, truth, std::nullopt);
      return occupancy(i, slne_sopa(f, models_.get(ArchId::SlneDecoder)), truth);
    }
    }
    throw std::logic_error("unreachable");
  }

  // SLNE feature payload for scale i, decoded into features on the scale
  // i-1 POVs. `count` is attached to the chunk when set.
  SparseTensor slne_features(int i, const std::vector<CoordSetPtr>& rec,
                             const CoordSetPtr& truth, std::optional<uint64_t> count)
  {
    const auto& enc = models_.get(ArchId::SlneEncoder);
    const auto& dec = models_.get(ArchId::SlneDecoder);
    if (i < 2)
      return root_features(dec.channels);
    const auto model = entropy_model(enc);
    const CoordSetPtr& coarse = rec[size_t(i - 2)];
    std::vector<int32_t> q;
    if (encoding()) {
      auto e = slne_encode(geometry(i, truth), enc);
      q = std::move(e.q);
      Chunk c{i, ChunkKind::Features, count, factorized_encode(q, model)};
      stats_->push_back({i, ChunkKind::Features, q.size(), factorized_ideal_bits(q, model),
                         c.payload.size() * 8});
      out_->push_back(std::move(c));
    } else {
      const Chunk& c = next(i, ChunkKind::Features, count.has_value());
      last_count_ = c.count;
      q = factorized_decode(c.payload, model, coarse->size() * size_t(enc.channels));
    }
    return slne_decode_features(q, coarse, i - 2, rec[size_t(i - 1)], dec);
  }

  // Transmitted POV count of scale i.
  uint64_t count(int i, const CoordSetPtr& truth)
  {
    if (encoding()) {
      out_->push_back({i, ChunkKind::Count, uint64_t(truth->size()), {}});
      stats_->push_back({i, ChunkKind::Count, 0, 0.0, 0});
      return truth->size();
    }
    const Chunk& c = next(i, ChunkKind::Count, true);
    return *c.count;
  }

  std::optional<uint64_t> last_count() const { return last_count_; }

  std::vector<int32_t> offsets(int i, const std::vector<int32_t>* values, size_t n,
                               const FactorizedModel& model)
  {
    if (encoding()) {
      Chunk c{i, ChunkKind::Offsets, std::nullopt, factorized_encode(*values, model)};
      stats_->push_back({i, ChunkKind::Offsets, values->size(),
                         factorized_ideal_bits(*values, model), c.payload.size() * 8});
      out_->push_back(std::move(c));
      return *values;
    }
    return factorized_decode(next(i, ChunkKind::Offsets, false).payload, model, n);
  }

  void finish() const
  {
    if (!encoding() && pos_ != in_->size())
      throw FormatError("unexpected trailing chunks");
  }

private:
  const Chunk& next(int scale, ChunkKind kind, bool with_count)
  {
    if (pos_ >= in_->size())
      throw FormatError("missing chunk for scale " + std::to_string(scale));
    const Chunk& c = (*in_)[pos_++];
    if (c.scale != scale || c.kind != kind || c.count.has_value() != with_count)
      throw FormatError("unexpected chunk at scale " + std::to_string(c.scale));
    return c;
  }

  CoordSetPtr occupancy(int i, const StagePrediction& pred, const CoordSetPtr& truth)
  {
    if (encoding()) {
      BinarySymbolStream s{truth_symbols(*truth)(0, pred), pred.probs};
      emit_occupancy(i, s);
      return truth;
    }
    const Chunk& c = next(i, ChunkKind::Occupancy, false);
    auto bits = ac_decode(c.payload, [&](size_t j) { return pred.probs[j]; },
                          pred.probs.size());
    return occupied(pred.coords, bits);
  }

  CoordSetPtr multi_stage(int i, const CoordSetPtr& prev, const CoordSetPtr& truth)
  {
    const auto& net = models_.get(cfg_.lossless_arch == LosslessArch::MultiStage3
                                    ? ArchId::MultiStageSopa3
                                    : ArchId::MultiStageSopa8);
    if (encoding()) {
      BinarySymbolStream s;
      auto truth_src = truth_symbols(*truth);
      sopa_multi_stage(geometry(i - 1, prev), net, [&](int stage, const StagePrediction& p) {
        auto bits = truth_src(stage, p);
        s.symbols.insert(s.symbols.end(), bits.begin(), bits.end());
        s.probs.insert(s.probs.end(), p.probs.begin(), p.probs.end());
        return bits;
      });
      emit_occupancy(i, s);
      return truth;
    }
    const Chunk& c = next(i, ChunkKind::Occupancy, false);
    RangeDecoder dec(c.payload);
    auto r = sopa_multi_stage(geometry(i - 1, prev), net,
                              [&](int, const StagePrediction& p) {
                                std::vector<uint8_t> bits(p.probs.size());
                                for (size_t j = 0; j < bits.size(); ++j)
                                  bits[j] = dec.decode_bit(quantize_probability(p.probs[j]));
                                return bits;
                              });
    if (r.survivors->empty())
      throw FormatError("corrupt occupancy payload: empty scale");
    return r.survivors;
  }

  void emit_occupancy(int i, const BinarySymbolStream& s)
  {
    Chunk c{i, ChunkKind::Occupancy, std::nullopt, ac_encode(s)};
    stats_->push_back({i, ChunkKind::Occupancy, s.symbols.size(), ideal_bits(s),
                       c.payload.size() * 8});
    out_->push_back(std::move(c));
  }

  const CodecConfig& cfg_;
  const ModelSet& models_;
  std::vector<Chunk>* out_;
  std::vector<ChunkStats>* stats_;
  const std::vector<Chunk>* in_;
  size_t pos_ = 0;
  std::optional<uint64_t> last_count_;
};

// Runs the scale loop for either direction. `truth` is the pyramid when
// encoding and empty when decoding.
PointCloud run(Session& s, const CodecConfig& cfg, const ModelSet& models,
               const std::vector<CoordSetPtr>& truth)
{
  const int n = cfg.precision;
  auto truth_at = [&](int i) { return truth.empty() ? CoordSetPtr() : truth[size_t(i)]; };
  std::vector<CoordSetPtr> rec(size_t(n) + 1);
  rec[0] = CoordSet::from_coords({{0, 0, 0}});

  const int lossless_top = cfg.mode == CodecMode::Lossless ? n : cfg.m;
  for (int i = 1; i <= lossless_top; ++i)
    rec[size_t(i)] = s.lossless(i, rec, truth_at(i));

  PointCloud out;
  out.precision = n;
  if (cfg.mode == CodecMode::LossyDense) {
    // m -> m+1: SLNE features and the POV count, then top-k.
    const int i = cfg.m + 1;
    const auto& dec = models.get(ArchId::SlneDecoder);
    std::optional<uint64_t> k = s.encoding() ? std::optional<uint64_t>(truth_at(i)->size())
                                             : std::optional<uint64_t>(0);
    SparseTensor f = s.slne_features(i, rec, truth_at(i), k);
    if (!s.encoding())
      k = s.last_count();
    auto pred = slne_sopa(f, dec);
    if (*k == 0 || *k > pred.coords.size())
      throw FormatError("invalid point count at scale " + std::to_string(i));
    rec[size_t(i)] = CoordSet::from_coords(lossy_threshold(pred, size_t(*k)));
    const auto& one = models.get(ArchId::OneStageSopa);
    for (int j = i + 1; j <= n; ++j) {
      const uint64_t kj = s.count(j, truth_at(j));
      auto p = sopa_one_stage(geometry(j - 1, rec[size_t(j - 1)]), one);
      if (kj == 0 || kj > p.coords.size())
        throw FormatError("invalid point count at scale " + std::to_string(j));
      rec[size_t(j)] = CoordSet::from_coords(lossy_threshold(p, size_t(kj)));
    }
    out.points.assign(rec[size_t(n)]->coords().begin(), rec[size_t(n)]->coords().end());
  } else if (cfg.mode == CodecMode::LossySparse) {
    const auto& net = models.get(ArchId::SopaPosition);
    const auto model = entropy_model(net);
    const CoordSetPtr& coarse = rec[size_t(cfg.m)];
    std::vector<int32_t> values;
    if (s.encoding()) {
      auto pred = sopa_position(geometry(cfg.m, coarse), net);
      const double lim = double(int64_t(1) << n);
      values.reserve(size_t(pred.offsets.size()));
      for (Eigen::Index r = 0; r < pred.offsets.rows(); ++r)
        for (Eigen::Index c = 0; c < 3; ++c)
          values.push_back(quantize_feature(std::clamp(pred.offsets(r, c), -lim, lim)));
    }
    values = s.offsets(n, &values, coarse->size() * 3, model);
    out.points.reserve(coarse->size());
    for (size_t r = 0; r < coarse->size(); ++r)
      out.points.push_back(reconstruct_position(
        (*coarse)[r], {values[3 * r], values[3 * r + 1], values[3 * r + 2]}, n, cfg.m));
  } else {
    out.points.assign(rec[size_t(n)]->coords().begin(), rec[size_t(n)]->coords().end());
  }
  s.finish();
  return out;
}

}  // namespace

std::string_view mode_name(CodecMode mode)
{
  switch (mode) {
  case CodecMode::Lossless: return "lossless";
  case CodecMode::LossyDense: return "lossy-dense";
  case CodecMode::LossySparse: return "lossy-sparse";
  }
  return "?";
}

std::optional<CodecMode> parse_mode(std::string_view name)
{
  for (auto m : {CodecMode::Lossless, CodecMode::LossyDense, CodecMode::LossySparse})
    if (mode_name(m) == name)
      return m;
  return std::nullopt;
}

std::string_view lossless_arch_name(LosslessArch arch)
{
  switch (arch) {
  case LosslessArch::OneStage: return "one-stage";
  case LosslessArch::MultiStage3: return "multi-stage-3";
  case LosslessArch::MultiStage8: return "multi-stage-8";
  case LosslessArch::SlneOneStage: return "slne-one-stage";
  }
  return "?";
}

std::optional<LosslessArch> parse_lossless_arch(std::string_view name)
{
  for (auto a : {LosslessArch::OneStage, LosslessArch::MultiStage3,
                 LosslessArch::MultiStage8, LosslessArch::SlneOneStage})
    if (lossless_arch_name(a) == name)
      return a;
  return std::nullopt;
}

void CodecConfig::validate() const
{
  if (precision < 1 || precision > kMaxPrecision)
    throw std::invalid_argument("precision must be in [1, " + std::to_string(kMaxPrecision) + "]");
  if (mode != CodecMode::Lossless && (m <= 0 || m >= precision))
    throw std::invalid_argument("lossy modes need 0 < m < N");
  if (uint8_t(lossless_arch) > uint8_t(LosslessArch::SlneOneStage))
    throw std::invalid_argument("unknown lossless architecture");
}

// ---------------------------------------------------------------------------

void ModelSet::add(NetworkParams net)
{
  const ArchId arch = net.arch;
  nets_.insert_or_assign(arch, std::move(net));
}

const NetworkParams* ModelSet::find(ArchId arch) const
{
  auto it = nets_.find(arch);
  return it == nets_.end() ? nullptr : &it->second;
}

const NetworkParams& ModelSet::get(ArchId arch) const
{
  if (const auto* n = find(arch))
    return *n;
  throw std::invalid_argument("missing model: " + std::string(arch_name(arch)));
}

std::vector<ArchId> ModelSet::required(CodecMode mode, LosslessArch arch)
{
  std::vector<ArchId> out;
  auto need = [&](ArchId a) {
    if (std::find(out.begin(), out.end(), a) == out.end())
      out.push_back(a);
  };
  if (arch == LosslessArch::SlneOneStage) {
    need(ArchId::SlneEncoder);
    need(ArchId::SlneDecoder);
  } else {
    need(lossless_net(arch));
  }
  if (mode == CodecMode::LossyDense) {
    need(ArchId::SlneEncoder);
    need(ArchId::SlneDecoder);
    need(ArchId::OneStageSopa);
  } else if (mode == CodecMode::LossySparse) {
    need(ArchId::SopaPosition);
  }
  return out;
}

uint64_t ModelSet::checksum(CodecMode mode, LosslessArch arch) const
{
  Fnv1a64 h;
  for (ArchId a : required(mode, arch)) {
    const auto& net = get(a);
    h.update_u64(uint64_t(a));
    h.update_u64(uint64_t(net.kernel_size));
    h.update_u64(uint64_t(net.channels));
    h.update_u64(net.checksum());
  }
  return h.digest();
}

// ---------------------------------------------------------------------------

std::vector<uint8_t> write_bitstream(const Bitstream& bs)
{
  ByteWriter w;
  w.put_bytes({reinterpret_cast<const uint8_t*>(kMagic), 4});
  w.put_u8(bs.header.version);
  w.put_u8(uint8_t(bs.header.cfg.mode));
  w.put_u8(uint8_t(bs.header.cfg.precision));
  w.put_u8(uint8_t(bs.header.cfg.m));
  w.put_u8(uint8_t(bs.header.cfg.lossless_arch));
  w.put_varint(bs.header.original_count);
  w.put_u64(bs.header.model_checksum);
  w.put_varint(bs.chunks.size());
  for (const auto& c : bs.chunks) {
    w.put_u8(uint8_t(c.scale));
    w.put_u8(uint8_t(c.kind) | (c.count ? kHasCount : 0));
    if (c.count)
      w.put_varint(*c.count);
    w.put_u32(uint32_t(c.payload.size()));
    w.put_bytes(c.payload);
  }
  w.put_u64(fnv1a64(w.bytes()));
  return w.take();
}

namespace {

struct ParsedStream {
  Bitstream bs;
  std::vector<size_t> chunk_bytes;
};

ParsedStream parse(std::span<const uint8_t> bytes)
{
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not an SPCG bitstream");
  if (bytes.size() < 8 + 4)
    throw FormatError("truncated bitstream");
  const auto body = bytes.first(bytes.size() - 8);
  ByteReader tail(bytes.last(8));
  if (tail.get_u64() != fnv1a64(body))
    throw FormatError("bitstream checksum mismatch (corrupt data)");

  ParsedStream out;
  ByteReader r(body);
  r.get_bytes(4);
  auto& h = out.bs.header;
  h.version = r.get_u8();
  if (h.version != kBitstreamVersion)
    throw FormatError("unsupported bitstream version " + std::to_string(h.version));
  const uint8_t mode = r.get_u8();
  if (mode > uint8_t(CodecMode::LossySparse))
    throw FormatError("unknown coding mode");
  h.cfg.mode = CodecMode(mode);
  h.cfg.precision = r.get_u8();
  h.cfg.m = r.get_u8();
  h.cfg.lossless_arch = LosslessArch(r.get_u8());
  try {
    h.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("bad header: ") + e.what());
  }
  h.original_count = r.get_varint();
  h.model_checksum = r.get_u64();
  const uint64_t chunks = r.get_varint();
  if (chunks > r.remaining())
    throw FormatError("chunk count exceeds stream size");
  for (uint64_t k = 0; k < chunks; ++k) {
    const size_t start = r.position();
    Chunk c;
    c.scale = r.get_u8();
    const uint8_t kind = r.get_u8();
    if ((kind & ~kHasCount) > uint8_t(ChunkKind::Count))
      throw FormatError("unknown chunk kind");
    c.kind = ChunkKind(kind & ~kHasCount);
    if (kind & kHasCount)
      c.count = r.get_varint();
    const uint32_t len = r.get_u32();
    auto payload = r.get_bytes(len);
    c.payload.assign(payload.begin(), payload.end());
    out.bs.chunks.push_back(std::move(c));
    out.chunk_bytes.push_back(r.position() - start);
  }
  if (r.remaining() != 0)
    throw FormatError("trailing bytes after last chunk");
  return out;
}

}  // namespace

Bitstream read_bitstream(std::span<const uint8_t> bytes)
{
  return parse(bytes).bs;
}

// ---------------------------------------------------------------------------

std::vector<CoordSetPtr> build_pyramid(const PointCloud& cloud)
{
  std::vector<CoordSetPtr> p(size_t(cloud.precision) + 1);
  p[size_t(cloud.precision)] = CoordSet::from_coords(cloud.points);
  for (int i = cloud.precision; i > 0; --i)
    p[size_t(i - 1)] = parents_of(*p[size_t(i)]);
  return p;
}

EncodeResult encode(const PointCloud& cloud, const CodecConfig& cfg,
                    const ModelSet& models)
{
  cfg.validate();
  if (cloud.points.empty())
    throw std::invalid_argument("empty cloud");
  PointCloud scaled = cloud;
  scaled.precision = cfg.precision;
  if (!scaled.in_range())
    throw std::invalid_argument("coordinate out of range for precision "
                                + std::to_string(cfg.precision));
  const auto pyramid = build_pyramid(scaled);

  Bitstream bs;
  bs.header.cfg = cfg;
  if (cfg.mode == CodecMode::Lossless)
    bs.header.cfg.m = 0;
  bs.header.original_count = std::max(cloud.original_count, cloud.points.size());
  bs.header.model_checksum = models.checksum(cfg.mode, cfg.lossless_arch);

  EncodeResult res;
  Session s(bs.header.cfg, models, &bs.chunks, &res.stats, nullptr);
  run(s, bs.header.cfg, models, pyramid);
  res.bytes = write_bitstream(bs);
  return res;
}

PointCloud decode(std::span<const uint8_t> bytes, const ModelSet& models)
{
  const Bitstream bs = read_bitstream(bytes);
  const auto& cfg = bs.header.cfg;
  for (ArchId a : ModelSet::required(cfg.mode, cfg.lossless_arch))
    if (!models.find(a))
      throw ModelMismatch();
  if (models.checksum(cfg.mode, cfg.lossless_arch) != bs.header.model_checksum)
    throw ModelMismatch();
  Session s(cfg, models, nullptr, nullptr, &bs.chunks);
  PointCloud out = run(s, cfg, models, {});
  out.original_count = bs.header.original_count;
  return out;
}

RateReport rate_report(std::span<const uint8_t> bytes)
{
  const auto parsed = parse(bytes);
  RateReport r;
  r.total_bits = uint64_t(bytes.size()) * 8;
  uint64_t chunk_bits = 0;
  for (size_t k = 0; k < parsed.bs.chunks.size(); ++k) {
    const uint64_t bits = uint64_t(parsed.chunk_bytes[k]) * 8;
    r.scale_bits[parsed.bs.chunks[k].scale] += bits;
    chunk_bits += bits;
  }
  r.header_bits = r.total_bits - chunk_bits;
  r.original_count = parsed.bs.header.original_count;
  r.bpp = r.original_count ? double(r.total_bits) / double(r.original_count) : 0.0;
  return r;
}

double uniform_baseline_bpp(const PointCloud& cloud)
{
  const auto p = build_pyramid(cloud);
  size_t mp = 0;
  for (int i = 1; i <= cloud.precision; ++i)
    mp += 8 * p[size_t(i - 1)]->size();
  return double(mp) / double(std::max(cloud.original_count, cloud.points.size()));
}

}  // namespace spcg
