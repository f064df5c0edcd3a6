#include "oracles.h"

#include "spcg/entropy.h"
#include "spcg/sopa.h"

#include <gtest/gtest.h>

#include <map>
#include <numeric>

using namespace spcg;

namespace {

NetworkParams random_net(ArchId arch, int k, int c, uint64_t seed)
{
  auto net = make_network(arch, k, c);
  init_he_uniform(net, seed);
  return net;
}

SparseTensor random_pov(Rng& rng, int scale, size_t n)
{
  return SparseTensor::geometry(scale, oracle::random_coords(rng, n, 1 << scale));
}

// Random ground truth at scale i for a given set of scale i-1 POVs: every
// parent keeps at least one child.
CoordSetPtr random_children(Rng& rng, const CoordSet& parents, double p)
{
  std::vector<Coord3> out;
  for (const auto& c : parents.coords()) {
    const size_t before = out.size();
    for (const auto& o : child_offsets())
      if (rng.uniform() < p)
        out.push_back({2 * c.x + o.x, 2 * c.y + o.y, 2 * c.z + o.z});
    if (out.size() == before) {
      const auto& o = child_offsets()[rng.below(8)];
      out.push_back({2 * c.x + o.x, 2 * c.y + o.y, 2 * c.z + o.z});
    }
  }
  return CoordSet::from_coords(std::move(out));
}

}  // namespace

TEST(Sopa, ZeroHeadGivesHalf)
{
  auto net = random_net(ArchId::OneStageSopa, 3, 8, 1);
  net.layers[size_t(one_stage_layout(net).ool.head)].set_zero();
  Rng rng(2);
  auto prev = random_pov(rng, 3, 20);
  auto pred = sopa_one_stage(prev, net);
  ASSERT_EQ(pred.probs.size(), 160u);
  for (double p : pred.probs)
    EXPECT_EQ(p, 0.5);
  BinarySymbolStream s{std::vector<uint8_t>(160, 1), pred.probs};
  EXPECT_DOUBLE_EQ(ideal_bits(s), 160.0);
}

TEST(Sopa, SingleParentEightChildren)
{
  auto net = random_net(ArchId::OneStageSopa, 3, 8, 3);
  auto pred = sopa_one_stage(SparseTensor::geometry(2, {{1, 2, 3}}), net);
  ASSERT_EQ(pred.coords.size(), 8u);
  for (size_t j = 0; j < 8; ++j) {
    EXPECT_EQ(parent_of(pred.coords[j]), (Coord3{1, 2, 3}));
    EXPECT_EQ(child_offset(pred.coords[j]), child_offsets()[j]);
    EXPECT_GT(pred.probs[j], 0.0);
    EXPECT_LT(pred.probs[j], 1.0);
  }
}

TEST(Sopa, OneStagePermutationInvariant)
{
  auto net = random_net(ArchId::OneStageSopa, 3, 8, 4);
  Rng rng(5);
  auto pts = oracle::random_coords(rng, 40, 8);
  auto a = sopa_one_stage(SparseTensor::geometry(3, pts), net);
  std::reverse(pts.begin(), pts.end());
  auto b = sopa_one_stage(SparseTensor::geometry(3, pts), net);
  EXPECT_EQ(a.coords, b.coords);
  EXPECT_EQ(a.probs, b.probs);
}

TEST(Sopa, MultiStageShapes)
{
  auto net = random_net(ArchId::MultiStageSopa8, 3, 8, 6);
  auto prev = SparseTensor::geometry(1, {{0, 1, 0}});
  auto all = CoordSet::from_coords(
    {{0, 2, 0}, {0, 2, 1}, {0, 3, 0}, {0, 3, 1}, {1, 2, 0}, {1, 2, 1}, {1, 3, 0}, {1, 3, 1}});
  auto r = sopa_multi_stage(prev, net, truth_symbols(*all));
  ASSERT_EQ(r.stages.size(), 8u);
  for (size_t s = 0; s < 8; ++s) {
    ASSERT_EQ(r.stages[s].coords.size(), 1u);
    EXPECT_EQ(child_offset(r.stages[s].coords[0]), child_offsets()[s]);
    EXPECT_EQ(r.symbols[s], std::vector<uint8_t>{1});
  }
  ASSERT_EQ(r.survivors->size(), 8u);
  EXPECT_EQ(oracle::as_set(r.survivors->coords()), oracle::as_set(all->coords()));

  auto net3 = random_net(ArchId::MultiStageSopa3, 3, 8, 7);
  auto r3 = sopa_multi_stage(prev, net3, truth_symbols(*all));
  ASSERT_EQ(r3.stages.size(), 3u);
  EXPECT_EQ(r3.stages[0].coords.size(), 1u);
  EXPECT_EQ(r3.stages[1].coords.size(), 3u);
  EXPECT_EQ(r3.stages[2].coords.size(), 4u);
}

TEST(Sopa, MultiStageRoundTripThroughCoder)
{
  Rng rng(8);
  for (ArchId arch : {ArchId::MultiStageSopa3, ArchId::MultiStageSopa8}) {
    for (int trial = 0; trial < 4; ++trial) {
      auto net = random_net(arch, 3, 8, 10 + uint64_t(trial));
      auto prev = random_pov(rng, 3, 30);
      auto truth = random_children(rng, prev.coords(), 0.3);

      BinarySymbolStream stream;
      auto enc = sopa_multi_stage(prev, net, [&](int s, const StagePrediction& p) {
        auto bits = truth_symbols(*truth)(s, p);
        stream.probs.insert(stream.probs.end(), p.probs.begin(), p.probs.end());
        stream.symbols.insert(stream.symbols.end(), bits.begin(), bits.end());
        return bits;
      });
      EXPECT_EQ(stream.symbols.size(), 8 * prev.size());
      auto bytes = ac_encode(stream);

      RangeDecoder dec(bytes);
      std::vector<double> dec_probs;
      auto out = sopa_multi_stage(prev, net, [&](int, const StagePrediction& p) {
        std::vector<uint8_t> bits;
        for (double q : p.probs) {
          bits.push_back(dec.decode_bit(quantize_probability(q)) ? 1 : 0);
          dec_probs.push_back(q);
        }
        return bits;
      });
      EXPECT_EQ(dec_probs, stream.probs);
      EXPECT_EQ(oracle::as_set(out.survivors->coords()), oracle::as_set(truth->coords()));
      EXPECT_EQ(oracle::as_set(enc.survivors->coords()), oracle::as_set(truth->coords()));
    }
  }
}

TEST(Sopa, MultiStageCausality)
{
  Rng rng(9);
  auto net = random_net(ArchId::MultiStageSopa8, 3, 8, 11);
  auto prev = random_pov(rng, 3, 25);
  auto truth = random_children(rng, prev.coords(), 0.4);
  auto base = sopa_multi_stage(prev, net, truth_symbols(*truth));
  for (int flip_stage = 1; flip_stage < 8; ++flip_stage) {
    auto pert = sopa_multi_stage(prev, net, [&](int s, const StagePrediction& p) {
      auto bits = truth_symbols(*truth)(s, p);
      if (s == flip_stage)
        for (auto& b : bits)
          b ^= 1;
      return bits;
    });
    for (int s = 0; s <= flip_stage; ++s)
      EXPECT_EQ(pert.stages[size_t(s)].probs, base.stages[size_t(s)].probs) << s;
    if (flip_stage < 7)
      EXPECT_NE(pert.stages[size_t(flip_stage) + 1].probs,
                base.stages[size_t(flip_stage) + 1].probs);
  }
}

TEST(Sopa, MultiStageMatchesNaiveRebuild)
{
  // Stage 1 of 8-Stage sees only the backbone; its probabilities must equal a
  // one-off evaluation of the backbone + stage-1 blocks on the candidates.
  Rng rng(12);
  auto net = random_net(ArchId::MultiStageSopa8, 3, 8, 13);
  auto prev = random_pov(rng, 3, 15);
  auto truth = random_children(rng, prev.coords(), 0.5);
  auto r = sopa_multi_stage(prev, net, truth_symbols(*truth));

  const auto l = multi_stage_layout(net);
  auto h = sconv_forward(prev, net.layers[size_t(l.stem)]);
  Matrix f = h.features().cwiseMax(0.0);
  h = irn_block_forward(SparseTensor(h.scale(), h.coord_set(), f), net, l.dfa_parent);
  auto up = tsconv_up2_forward(h, net.layers[size_t(l.upsample)]);
  std::vector<Coord3> cand;
  for (const auto& c : up.coords().coords())
    if (child_offset(c) == Coord3{0, 0, 0})
      cand.push_back(c);
  auto kept = prune(SparseTensor(up.scale(), up.coord_set(), up.features().cwiseMax(0.0)), cand);
  auto d = irn_block_forward(kept, net, l.stages[0].dfa);
  Matrix p = ool_forward(d, net, l.stages[0].ool);
  ASSERT_EQ(size_t(p.rows()), r.stages[0].probs.size());
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    EXPECT_NEAR(p(i, 0), r.stages[0].probs[size_t(i)], 1e-12);
}

TEST(Slne, QuantizeRounding)
{
  EXPECT_EQ(quantize_feature(1.6), 2);
  EXPECT_EQ(quantize_feature(-0.5), -1);
  EXPECT_EQ(quantize_feature(0.5), 1);
  EXPECT_EQ(quantize_feature(-0.49), 0);
  EXPECT_THROW(quantize_feature(NAN), std::invalid_argument);
}

TEST(Slne, ZeroWeightsZeroFeatures)
{
  auto enc = make_network(ArchId::SlneEncoder, 3, 8);
  Rng rng(14);
  auto t = random_pov(rng, 4, 60);
  auto e = slne_encode(t, enc);
  for (int32_t v : e.q)
    EXPECT_EQ(v, 0);
  EXPECT_EQ(e.feature_scale, 2);
  EXPECT_EQ(e.geometry.scale(), 3);
  EXPECT_EQ(oracle::as_set(e.feature_coords->coords()),
            oracle::as_set(parents_of(*parents_of(t.coords()))->coords()));
  auto model = FactorizedModel::from_log_scales(enc.entropy_log_scales);
  // Coded cost comes from the quantised table; it stays close to the continuous mass.
  double expect = 0, continuous = 0;
  for (size_t i = 0; i < e.q.size(); ++i) {
    expect += model.cost_bits(0, i % model.channels());
    continuous += factorized_rate(0, model.scale(i % model.channels()));
  }
  double bits = factorized_ideal_bits(e.q, model);
  EXPECT_NEAR(bits, expect, 1e-9);
  EXPECT_NEAR(bits, continuous, 1e-3 * double(e.q.size()));
}

TEST(Slne, NoiseBoundAndDeterminism)
{
  auto enc = random_net(ArchId::SlneEncoder, 3, 8, 15);
  Rng rng(16);
  auto t = random_pov(rng, 5, 200);
  auto round = slne_encode(t, enc);
  Rng noise(17);
  auto noisy = slne_encode(t, enc, QuantMode::Noise, &noise);
  EXPECT_EQ(round.features, noisy.features);
  EXPECT_LE((noisy.quantized - noisy.features).cwiseAbs().maxCoeff(), 0.5);
  EXPECT_LE((round.quantized - round.features).cwiseAbs().maxCoeff(), 0.5);
  auto again = slne_encode(t, enc);
  EXPECT_EQ(round.q, again.q);
  EXPECT_THROW(slne_encode(SparseTensor::geometry(1, {{0, 0, 0}}), enc),
               std::invalid_argument);
}

TEST(Slne, DecodeFeaturesAlignedAndDeterministic)
{
  auto enc = random_net(ArchId::SlneEncoder, 3, 8, 18);
  auto dec = random_net(ArchId::SlneDecoder, 3, 8, 19);
  Rng rng(20);
  auto t = random_pov(rng, 5, 150);
  auto e = slne_encode(t, enc);
  auto f1 = slne_decode_features(e.q, e.feature_coords, e.feature_scale,
                                 e.geometry.coord_set(), dec);
  auto f2 = slne_decode_features(e.q, e.feature_coords, e.feature_scale,
                                 e.geometry.coord_set(), dec);
  EXPECT_EQ(f1.features(), f2.features());
  EXPECT_EQ(f1.scale(), 4);
  ASSERT_EQ(f1.size(), e.geometry.size());
  for (size_t i = 0; i < f1.size(); ++i)
    EXPECT_EQ(f1.coords()[i], e.geometry.coords()[i]);
  EXPECT_EQ(f1.channels(), 9);
  EXPECT_EQ(f1.features().col(8).minCoeff(), 1.0);

  auto pred = slne_sopa(f1, dec);
  EXPECT_EQ(pred.coords.size(), 8 * f1.size());

  // Zero q with zero biases: constant features.
  auto zero_dec = dec;
  for (auto& l : zero_dec.layers)
    l.bias.setZero();
  std::vector<int32_t> zq(e.q.size(), 0);
  auto fz = slne_decode_features(zq, e.feature_coords, e.feature_scale,
                                 e.geometry.coord_set(), zero_dec);
  EXPECT_EQ(fz.features().leftCols(8).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(fz.features().col(8).minCoeff(), 1.0);
}

TEST(Lossy, ThresholdExamples)
{
  StagePrediction p{{{0, 0, 0}, {0, 0, 1}, {0, 1, 0}}, {0.9, 0.8, 0.1}};
  EXPECT_EQ(lossy_threshold(p, 2), (std::vector<Coord3>{{0, 0, 0}, {0, 0, 1}}));
  EXPECT_EQ(lossy_threshold(p, 3), p.coords);
  EXPECT_TRUE(lossy_threshold(p, 0).empty());
  EXPECT_THROW(lossy_threshold(p, 4), std::invalid_argument);
  StagePrediction ties{{{0, 0, 0}, {0, 0, 1}, {0, 1, 0}}, {0.5, 0.7, 0.5}};
  EXPECT_EQ(lossy_threshold(ties, 2), (std::vector<Coord3>{{0, 0, 0}, {0, 0, 1}}));
}

TEST(Lossy, ThresholdMatchesSortOracle)
{
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t n = 1 + rng.below(60);
    StagePrediction p;
    auto set = CoordSet::from_coords(oracle::random_coords(rng, n, 16));
    p.coords.assign(set->coords().begin(), set->coords().end());
    for (size_t i = 0; i < n; ++i)
      p.probs.push_back(double(rng.below(10)) / 10.0);  // many ties
    const size_t k = rng.below(n + 1);
    // Oracle: full sort by (-p, index), take k, restore order.
    std::vector<std::pair<double, size_t>> v;
    for (size_t i = 0; i < n; ++i)
      v.push_back({-p.probs[i], i});
    std::sort(v.begin(), v.end());
    std::vector<size_t> take;
    for (size_t i = 0; i < k; ++i)
      take.push_back(v[i].second);
    std::sort(take.begin(), take.end());
    std::vector<Coord3> expect;
    for (size_t i : take)
      expect.push_back(p.coords[i]);
    EXPECT_EQ(lossy_threshold(p, k), expect);
  }
}

TEST(Position, ReconstructExample)
{
  const double off[3] = {0.4, -0.3, 1.6};
  EXPECT_EQ(reconstruct_position({3, 4, 5}, off, 8, 6), (Coord3{12, 16, 22}));
  const double zero[3] = {0, 0, 0};
  EXPECT_EQ(reconstruct_position({3, 4, 5}, zero, 8, 6), (Coord3{12, 16, 20}));
  const double big[3] = {-100, 0, 100};
  EXPECT_EQ(reconstruct_position({0, 1, 63}, big, 8, 6), (Coord3{0, 4, 255}));
  EXPECT_THROW(reconstruct_position({0, 0, 0}, zero, 6, 6), std::invalid_argument);
}

TEST(Position, CardinalityPreserved)
{
  auto net = random_net(ArchId::SopaPosition, 5, 8, 22);
  Rng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    auto coarse = random_pov(rng, 4, 1 + rng.below(80));
    auto pred = sopa_position(coarse, net);
    ASSERT_EQ(pred.coords.size(), coarse.size());
    ASSERT_EQ(pred.offsets.rows(), Eigen::Index(coarse.size()));
    ASSERT_EQ(pred.offsets.cols(), 3);
    std::vector<Coord3> rec;
    for (size_t i = 0; i < pred.coords.size(); ++i) {
      const Eigen::Index r = Eigen::Index(i);
      const double o[3] = {pred.offsets(r, 0), pred.offsets(r, 1), pred.offsets(r, 2)};
      rec.push_back(reconstruct_position(pred.coords[i], o, 7, 4));
      EXPECT_TRUE(in_morton_range(rec.back()));
      EXPECT_LT(rec.back().x, 128);
    }
    EXPECT_EQ(rec.size(), coarse.size());
  }
}
