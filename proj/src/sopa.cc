#include "spcg/sopa.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace spcg {

namespace {

std::vector<double> first_column(const Matrix& m)
{
  std::vector<double> out(size_t(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    out[size_t(i)] = m(i, 0);
  return out;
}

void check_input_width(const SparseTensor& t, int expected)
{
  if (t.channels() != expected)
    throw std::invalid_argument("input feature width " + std::to_string(t.channels())
                                + " does not match model input width "
                                + std::to_string(expected));
}

}  // namespace

SymbolSource truth_symbols(const CoordSet& truth)
{
  return [&truth](int, const StagePrediction& pred) {
    std::vector<uint8_t> bits(pred.coords.size());
    for (size_t j = 0; j < pred.coords.size(); ++j)
      bits[j] = truth.contains(pred.coords[j]) ? 1 : 0;
    return bits;
  };
}

OneStageGraph one_stage_graph(NetEval& ev, const OneStageLayout& l,
                              const TensorVar& parent)
{
  TensorVar h = ev.relu(ev.conv(parent, l.stem));
  h = ev.dfa(h, l.dfa_parent);
  TensorVar up = ev.relu(ev.conv(h, l.upsample));
  up = ev.dfa(up, l.dfa_child);
  return {up.coords, ev.ool(up, l.ool)};
}

MultiStageGraph multi_stage_graph(NetEval& ev, const MultiStageLayout& l,
                                  const GroupingArrangement& arr,
                                  const TensorVar& parent,
                                  const SymbolSource& symbols)
{
  if (size_t(arr.stage_count()) != l.stages.size())
    throw std::invalid_argument("grouping does not match the model's stage count");
  Tape& tape = ev.tape();
  TensorVar h = ev.relu(ev.conv(parent, l.stem));
  h = ev.dfa(h, l.dfa_parent);
  TensorVar up = ev.relu(ev.conv(h, l.upsample));
  const CoordSet& kids = *up.coords;

  std::vector<std::vector<int32_t>> stage_rows(l.stages.size());
  for (size_t r = 0; r < kids.size(); ++r)
    stage_rows[size_t(arr.stage_index(child_offset(kids[r])))].push_back(int32_t(r));

  MultiStageGraph g;
  std::vector<Coord3> surv_coords;
  std::vector<uint64_t> surv_keys;
  Tape::Var surv_var;

  for (size_t s = 0; s < l.stages.size(); ++s) {
    const auto& cand = stage_rows[s];
    // Merge survivors and candidates into one Morton-ordered working set.
    std::vector<Coord3> uc;
    std::vector<uint64_t> uk;
    std::vector<int32_t> index;
    std::vector<int32_t> head_rows;
    uc.reserve(surv_coords.size() + cand.size());
    uk.reserve(uc.capacity());
    index.reserve(uc.capacity());
    size_t a = 0;
    size_t b = 0;
    while (a < surv_keys.size() || b < cand.size()) {
      const bool take_survivor = b == cand.size()
        || (a < surv_keys.size() && surv_keys[a] < kids.key(size_t(cand[b])));
      if (take_survivor) {
        uc.push_back(surv_coords[a]);
        uk.push_back(surv_keys[a]);
        index.push_back(int32_t(a));
        ++a;
      } else {
        const size_t r = size_t(cand[b]);
        head_rows.push_back(int32_t(uc.size()));
        uc.push_back(kids[r]);
        uk.push_back(kids.key(r));
        index.push_back(-1 - int32_t(r));
        ++b;
      }
    }
    Tape::Var x = surv_var.valid() ? tape.merge_rows(surv_var, up.var, index)
                                   : tape.gather(up.var, cand);
    auto working = std::make_shared<const CoordSet>(std::move(uc), std::move(uk));
    TensorVar d = ev.dfa({x, working, up.scale}, l.stages[s].dfa);
    Tape::Var p = ev.ool(d, l.stages[s].ool, &head_rows);

    StagePrediction pred;
    pred.coords.reserve(cand.size());
    for (int32_t r : cand)
      pred.coords.push_back(kids[size_t(r)]);
    pred.probs = first_column(tape.value(p));
    std::vector<uint8_t> bits = symbols(int(s), pred);
    if (bits.size() != pred.coords.size())
      throw std::logic_error("symbol source returned the wrong number of bits");

    // Keep earlier survivors and the occupied candidates of this stage.
    std::vector<int32_t> keep;
    std::vector<Coord3> next_coords;
    std::vector<uint64_t> next_keys;
    size_t t = 0;
    for (size_t u = 0; u < working->size(); ++u) {
      const bool is_candidate = index[u] < 0;
      if (is_candidate && !bits[t++])
        continue;
      keep.push_back(int32_t(u));
      next_coords.push_back((*working)[u]);
      next_keys.push_back(working->key(u));
    }
    surv_var = tape.gather(d.var, std::move(keep));
    surv_coords = std::move(next_coords);
    surv_keys = std::move(next_keys);

    g.coords.push_back(std::move(pred.coords));
    g.probs.push_back(p);
    g.symbols.push_back(std::move(bits));
  }
  g.survivors = std::make_shared<const CoordSet>(std::move(surv_coords),
                                                 std::move(surv_keys));
  return g;
}

TensorVar slne_encoder_graph(NetEval& ev, const SlneEncoderLayout& l,
                             const TensorVar& pov)
{
  TensorVar h = ev.relu(ev.conv(pov, l.stem));
  h = ev.dfa(h, l.dfa1);
  h = ev.relu(ev.conv(h, l.down1));
  h = ev.dfa(h, l.dfa2);
  h = ev.relu(ev.conv(h, l.down2));
  h = ev.dfa(h, l.dfa3);
  return ev.conv(h, l.head);
}

TensorVar slne_feature_graph(NetEval& ev, const SlneDecoderLayout& l,
                             const TensorVar& q, CoordSetPtr target)
{
  TensorVar h = ev.relu(ev.up2_onto(q, l.upsample, std::move(target)));
  h = ev.dfa(h, l.dfa);
  Tape& tape = ev.tape();
  const auto rows = tape.value(h.var).rows();
  h.var = tape.concat(h.var, tape.input(Matrix::Ones(rows, 1)));
  return h;
}

Tape::Var position_graph(NetEval& ev, const PositionLayout& l,
                         const TensorVar& coarse)
{
  TensorVar h = ev.relu(ev.conv(coarse, l.stem));
  h = ev.dfa(h, l.dfa);
  return ev.ool(h, l.ool);
}

// ---------------------------------------------------------------------------

StagePrediction sopa_one_stage(const SparseTensor& prev, const NetworkParams& net)
{
  const auto layout = one_stage_layout(net);
  check_input_width(prev, 1);
  Tape tape;
  NetEval ev(tape, net, nullptr);
  auto g = one_stage_graph(ev, layout, ev.input(prev));
  StagePrediction out;
  out.coords.assign(g.children->coords().begin(), g.children->coords().end());
  out.probs = first_column(tape.value(g.probs));
  return out;
}

GroupingArrangement arrangement_for(const NetworkParams& net)
{
  switch (net.arch) {
  case ArchId::MultiStageSopa3:
    return GroupingArrangement::make(GroupingVariant::ThreeStage);
  case ArchId::MultiStageSopa8:
    return GroupingArrangement::make(GroupingVariant::EightStage);
  default:
    return GroupingArrangement::make(GroupingVariant::OneStage);
  }
}

MultiStageResult sopa_multi_stage(const SparseTensor& prev,
                                  const NetworkParams& net,
                                  const SymbolSource& symbols)
{
  const auto layout = multi_stage_layout(net);
  check_input_width(prev, 1);
  Tape tape;
  NetEval ev(tape, net, nullptr);
  auto g = multi_stage_graph(ev, layout, arrangement_for(net), ev.input(prev), symbols);
  MultiStageResult out;
  for (size_t s = 0; s < g.coords.size(); ++s)
    out.stages.push_back({std::move(g.coords[s]), first_column(tape.value(g.probs[s]))});
  out.symbols = std::move(g.symbols);
  out.survivors = std::move(g.survivors);
  return out;
}

int32_t quantize_feature(double v)
{
  if (!std::isfinite(v))
    throw std::invalid_argument("cannot quantize a non-finite feature");
  const double r = std::round(v);
  if (r > double(INT32_MAX) || r < double(INT32_MIN))
    throw std::invalid_argument("feature out of the quantizer range");
  return int32_t(r);
}

SlneEncoding slne_encode(const SparseTensor& t, const NetworkParams& enc,
                         QuantMode mode, Rng* rng)
{
  const auto layout = slne_encoder_layout(enc);
  if (t.scale() < 2)
    throw std::invalid_argument("SLNE needs an input scale of at least 2");
  if (mode == QuantMode::Noise && !rng)
    throw std::invalid_argument("noise quantization needs a random generator");
  Tape tape;
  NetEval ev(tape, enc, nullptr);
  auto geom = SparseTensor::geometry(t.scale(), t.coord_set());
  TensorVar y = slne_encoder_graph(ev, layout, ev.input(geom));

  SlneEncoding out{voxel_downscale_geom(t), y.coords, y.scale, tape.value(y.var),
                   Matrix(), {}};
  out.q.resize(size_t(out.features.size()));
  out.quantized.resize(out.features.rows(), out.features.cols());
  for (Eigen::Index i = 0; i < out.features.size(); ++i) {
    out.q[size_t(i)] = quantize_feature(out.features.data()[i]);
    out.quantized.data()[i] = mode == QuantMode::Round
      ? double(out.q[size_t(i)])
      : out.features.data()[i] + rng->uniform(-0.5, 0.5);
  }
  return out;
}

SparseTensor slne_decode_features(std::span<const int32_t> q,
                                  CoordSetPtr feature_coords, int feature_scale,
                                  CoordSetPtr target, const NetworkParams& dec)
{
  const auto layout = slne_decoder_layout(dec);
  const auto rows = Eigen::Index(feature_coords->size());
  if (size_t(rows) * size_t(dec.channels) != q.size())
    throw std::invalid_argument("feature count does not match the coordinates");
  Matrix f(rows, dec.channels);
  for (Eigen::Index i = 0; i < f.size(); ++i)
    f.data()[i] = double(q[size_t(i)]);
  Tape tape;
  NetEval ev(tape, dec, nullptr);
  TensorVar in{tape.input(std::move(f)), std::move(feature_coords), feature_scale};
  TensorVar out = slne_feature_graph(ev, layout, in, target);
  return SparseTensor(out.scale, out.coords, tape.value(out.var));
}

StagePrediction slne_sopa(const SparseTensor& features, const NetworkParams& dec)
{
  const auto layout = slne_decoder_layout(dec);
  check_input_width(features, dec.channels + 1);
  Tape tape;
  NetEval ev(tape, dec, nullptr);
  auto g = one_stage_graph(ev, layout.sopa, ev.input(features));
  StagePrediction out;
  out.coords.assign(g.children->coords().begin(), g.children->coords().end());
  out.probs = first_column(tape.value(g.probs));
  return out;
}

std::vector<Coord3> lossy_threshold(const StagePrediction& pred, size_t k)
{
  const size_t n = pred.coords.size();
  if (k > n)
    throw std::invalid_argument("cannot keep more candidates than predicted");
  if (pred.probs.size() != n)
    throw std::invalid_argument("prediction coordinates and probabilities differ");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return pred.probs[a] > pred.probs[b];
  });
  order.resize(k);
  std::sort(order.begin(), order.end());
  std::vector<Coord3> kept;
  kept.reserve(k);
  for (size_t i : order)
    kept.push_back(pred.coords[i]);
  return kept;
}

OffsetPrediction sopa_position(const SparseTensor& coarse, const NetworkParams& net)
{
  const auto layout = position_layout(net);
  check_input_width(coarse, 1);
  Tape tape;
  NetEval ev(tape, net, nullptr);
  Tape::Var o = position_graph(ev, layout, ev.input(coarse));
  return {{coarse.coords().coords().begin(), coarse.coords().coords().end()},
          tape.value(o)};
}

Coord3 reconstruct_position(Coord3 coord, Coord3 rounded_offset, int precision,
                            int coarse_scale)
{
  if (precision <= coarse_scale || coarse_scale < 0 || precision > kMortonBits)
    throw std::invalid_argument("reconstruction needs 0 <= m < N");
  const int shift = precision - coarse_scale;
  const int64_t hi = (int64_t(1) << precision) - 1;
  auto axis = [&](int32_t c, int32_t o) {
    return int32_t(std::clamp((int64_t(c) << shift) + int64_t(o), int64_t(0), hi));
  };
  return {axis(coord.x, rounded_offset.x), axis(coord.y, rounded_offset.y),
          axis(coord.z, rounded_offset.z)};
}

Coord3 reconstruct_position(Coord3 coord, std::span<const double> offset,
                            int precision, int coarse_scale)
{
  if (offset.size() != 3)
    throw std::invalid_argument("offset must have three components");
  return reconstruct_position(coord,
                              {quantize_feature(offset[0]), quantize_feature(offset[1]),
                               quantize_feature(offset[2])},
                              precision, coarse_scale);
}

}  // namespace spcg
