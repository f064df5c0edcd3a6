#pragma once

#include "spcg/network.h"
#include "spcg/rng.h"
#include "spcg/sparse_tensor.h"
#include "spcg/tape.h"

#include <functional>
#include <vector>

namespace spcg {

// Candidates of one coding step with their occupancy probabilities, in the
// order their symbols are coded (Morton order of the candidates).
struct StagePrediction {
  std::vector<Coord3> coords;
  std::vector<double> probs;
};

struct OffsetPrediction {
  std::vector<Coord3> coords;
  Matrix offsets;  // one (x, y, z) row per coordinate, scale-N voxel units
};

// Supplies the occupancy bits of a stage once its probabilities are known.
// The encoder looks them up in the ground truth, the decoder pulls them
// from the arithmetic decoder.
using SymbolSource =
  std::function<std::vector<uint8_t>(int stage, const StagePrediction&)>;

// Ground-truth symbol source over the POV set of the target scale.
SymbolSource truth_symbols(const CoordSet& truth);

// ---------------------------------------------------------------------------
// Graph builders shared by inference and training. `parent` carries the
// scale i-1 POVs with their input features.

struct OneStageGraph {
  CoordSetPtr children;  // all 8 children of every parent
  Tape::Var probs;       // one row per child
};

OneStageGraph one_stage_graph(NetEval& ev, const OneStageLayout& l,
                              const TensorVar& parent);

struct MultiStageGraph {
  std::vector<std::vector<Coord3>> coords;  // candidates per stage
  std::vector<Tape::Var> probs;
  std::vector<std::vector<uint8_t>> symbols;
  CoordSetPtr survivors;  // decoded POVs of the target scale
};

MultiStageGraph multi_stage_graph(NetEval& ev, const MultiStageLayout& l,
                                  const GroupingArrangement& arr,
                                  const TensorVar& parent,
                                  const SymbolSource& symbols);

// Encoder stack up to the pre-quantisation features at scale i-2.
TensorVar slne_encoder_graph(NetEval& ev, const SlneEncoderLayout& l,
                             const TensorVar& pov);

// Upscales (quantised) scale i-2 features onto the scale i-1 POVs. The result
// has C feature channels followed by a constant occupancy channel and feeds
// the feature-conditioned One-Stage SOPA.
TensorVar slne_feature_graph(NetEval& ev, const SlneDecoderLayout& l,
                             const TensorVar& q, CoordSetPtr target);

Tape::Var position_graph(NetEval& ev, const PositionLayout& l,
                         const TensorVar& coarse);

// ---------------------------------------------------------------------------
// Inference entry points (no gradients).

StagePrediction sopa_one_stage(const SparseTensor& prev, const NetworkParams& net);

struct MultiStageResult {
  std::vector<StagePrediction> stages;
  std::vector<std::vector<uint8_t>> symbols;
  CoordSetPtr survivors;
};

MultiStageResult sopa_multi_stage(const SparseTensor& prev,
                                  const NetworkParams& net,
                                  const SymbolSource& symbols);

GroupingArrangement arrangement_for(const NetworkParams& net);

enum class QuantMode : uint8_t { Round, Noise };

// Round half away from zero.
int32_t quantize_feature(double v);

struct SlneEncoding {
  SparseTensor geometry;  // dyadic downscale of the input (scale i-1)
  CoordSetPtr feature_coords;  // scale i-2 POVs
  int feature_scale = 0;
  Matrix features;             // pre-quantisation values
  Matrix quantized;            // rounded, or noisy in training mode
  std::vector<int32_t> q;      // rounded values, row-major
};

// Requires t.scale() >= 2. Noise mode draws U(-0.5, 0.5) from `rng`.
SlneEncoding slne_encode(const SparseTensor& t, const NetworkParams& enc,
                         QuantMode mode = QuantMode::Round, Rng* rng = nullptr);

// Decoded feature tensor at scale i-1 (the scale-(i-1) POVs given by
// `target`), computed from the integer features on `feature_coords`.
SparseTensor slne_decode_features(std::span<const int32_t> q,
                                  CoordSetPtr feature_coords, int feature_scale,
                                  CoordSetPtr target, const NetworkParams& dec);

// Feature-conditioned One-Stage prediction from a decoded feature tensor.
StagePrediction slne_sopa(const SparseTensor& features, const NetworkParams& dec);

// The k most probable candidates; ties go to the earlier Morton position.
std::vector<Coord3> lossy_threshold(const StagePrediction& pred, size_t k);

OffsetPrediction sopa_position(const SparseTensor& coarse, const NetworkParams& net);

// coord * 2^(N-m) + round(offset), clamped to [0, 2^N).
Coord3 reconstruct_position(Coord3 coord, std::span<const double> offset,
                            int precision, int coarse_scale);
Coord3 reconstruct_position(Coord3 coord, Coord3 rounded_offset, int precision,
                            int coarse_scale);

}  // namespace spcg
