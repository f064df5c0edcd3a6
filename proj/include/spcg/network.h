#pragma once

#include "spcg/conv.h"
#include "spcg/sparse_tensor.h"
#include "spcg/tape.h"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spcg {

enum class ArchId : uint8_t {
  OneStageSopa,
  MultiStageSopa3,
  MultiStageSopa8,
  SlneEncoder,
  SlneDecoder,
  SopaPosition,
};

std::string_view arch_name(ArchId arch);
std::optional<ArchId> parse_arch(std::string_view name);

// Parameters of one architecture. Convolution layers are stored in the
// order the layout functions below declare them.
struct NetworkParams {
  ArchId arch = ArchId::OneStageSopa;
  int kernel_size = 3;
  int channels = 32;
  std::vector<ConvLayerParams> layers;
  // Per-channel log Laplace scales of the factorized entropy model (SLNE
  // encoder features, position offsets); empty for other architectures.
  std::vector<double> entropy_log_scales;

  size_t parameter_count() const;
  // FNV-1a over every parameter value, in declaration order.
  uint64_t checksum() const;
};

// Zero-initialised network with the layer structure of `arch`.
NetworkParams make_network(ArchId arch, int kernel_size, int channels);

// He-uniform weights (fan-in = C_in times kernel volume), zero biases,
// unit Laplace scales.
void init_he_uniform(NetworkParams& net, uint64_t seed);

NetworkParams zeros_like(const NetworkParams& net);

// Contiguous views over every trainable value, declaration order.
std::vector<std::span<double>> parameter_blocks(NetworkParams& net);

// Binary model file ("SPNW").
std::vector<uint8_t> serialize_model(const NetworkParams& net);
NetworkParams deserialize_model(std::span<const uint8_t> bytes);
void save_model(const NetworkParams& net, const std::filesystem::path& path);
NetworkParams load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Layouts: indices of each block's layers inside NetworkParams::layers.

struct IrnUnitLayout {
  int branch_a;         // SConv k^3, C -> C/2, ReLU
  int branch_b_reduce;  // SConv 1^3, C -> C/2, ReLU
  int branch_b_conv;    // SConv k^3, C/2 -> C/2
  int merge;            // SConv 1^3, C -> C, then + input
};

// Deep feature aggregation: three IRN units.
using DfaLayout = std::array<IrnUnitLayout, 3>;

enum class OolMode : uint8_t { Probability, Offset };

struct OolLayout {
  int conv1;  // SConv k^3, C -> C, ReLU
  int conv2;  // SConv k^3, C -> C/2, ReLU
  int head;   // SConv 1^3, C/2 -> 1 (Sigmoid) or 3 (offsets)
  OolMode mode;
};

struct OneStageLayout {
  int stem;  // SConv k^3, in -> C, ReLU
  DfaLayout dfa_parent;
  int upsample;  // TSConv 2^3 up, ReLU
  DfaLayout dfa_child;
  OolLayout ool;
};

struct StageLayout {
  DfaLayout dfa;
  OolLayout ool;
};

struct MultiStageLayout {
  int stem;
  DfaLayout dfa_parent;
  int upsample;
  std::vector<StageLayout> stages;
};

struct SlneEncoderLayout {
  int stem;
  DfaLayout dfa1;
  int down1;  // SConv 2^3 down, ReLU
  DfaLayout dfa2;
  int down2;
  DfaLayout dfa3;
  int head;  // SConv 1^3, C -> C (pre-quantization features)
};

struct SlneDecoderLayout {
  int upsample;  // TSConv 2^3 up onto known coordinates, ReLU
  DfaLayout dfa;
  OneStageLayout sopa;  // consumes decoded features plus the occupancy channel
};

struct PositionLayout {
  int stem;
  DfaLayout dfa;
  OolLayout ool;
};

OneStageLayout one_stage_layout(const NetworkParams& net);
MultiStageLayout multi_stage_layout(const NetworkParams& net);
SlneEncoderLayout slne_encoder_layout(const NetworkParams& net);
SlneDecoderLayout slne_decoder_layout(const NetworkParams& net);
PositionLayout position_layout(const NetworkParams& net);

// ---------------------------------------------------------------------------
// Tape-backed evaluation of network blocks on sparse tensors.

struct TensorVar {
  Tape::Var var;
  CoordSetPtr coords;
  int scale = 0;
};

class NetEval {
public:
  // `grads`, when non-null, must have the shape of `net`.
  NetEval(Tape& tape, const NetworkParams& net, NetworkParams* grads);

  Tape& tape() { return tape_; }
  const NetworkParams& net() const { return net_; }

  TensorVar input(const SparseTensor& t, bool requires_grad = false);

  // Dispatches on the layer stride; Up2 generates all 8 children.
  TensorVar conv(const TensorVar& x, int layer);
  TensorVar up2_onto(const TensorVar& x, int layer, CoordSetPtr target);
  TensorVar relu(const TensorVar& x);

  TensorVar irn_unit(const TensorVar& x, const IrnUnitLayout& l);
  TensorVar dfa(const TensorVar& x, const DfaLayout& l);
  // OOL trunk over all of x; the 1^3 head only on `rows` (all when null).
  Tape::Var ool(const TensorVar& x, const OolLayout& l,
                const std::vector<int32_t>* rows = nullptr);

private:
  ConvLayerParams* grad_of(int layer);

  Tape& tape_;
  const NetworkParams& net_;
  NetworkParams* grads_;
};

// Single-call wrappers over a scratch tape (the block's own parameters are
// read from `net`).
SparseTensor irn_block_forward(const SparseTensor& t, const NetworkParams& net,
                               const DfaLayout& layout);
Matrix ool_forward(const SparseTensor& t, const NetworkParams& net,
                   const OolLayout& layout);

}  // namespace spcg
