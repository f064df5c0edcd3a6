#pragma once

#include "spcg/kernel_map.h"
#include "spcg/matrix.h"
#include "spcg/sparse_tensor.h"

#include <cstdint>
#include <vector>

namespace spcg {

enum class Stride : uint8_t { None = 0, Down2 = 1, Up2 = 2 };

// Weights W_k (C_in x C_out) for every kernel offset, plus a bias.
struct ConvLayerParams {
  std::vector<Coord3> offsets;
  std::vector<Matrix> weights;
  RowVector bias;
  Stride stride = Stride::None;

  int in_channels() const { return int(weights.front().rows()); }
  int out_channels() const { return int(weights.front().cols()); }
  // Edge length of a submanifold kernel (2 for strided layers).
  int kernel_size() const;

  // Zero-initialised layer; kernel_size is ignored for strided layers.
  static ConvLayerParams zeros(Stride stride, int kernel_size, int in_channels,
                               int out_channels);
  void set_zero();
  size_t parameter_count() const;
};

// out[u] = bias + sum_k W_k^T in[pair(u,k)], offsets accumulated in order.
Matrix conv_apply(const Matrix& in, const KernelMap& map,
                  const ConvLayerParams& p);

// Accumulates (+=) into grad_in and grad_params when non-null.
void conv_backward(const Matrix& in, const Matrix& grad_out,
                   const KernelMap& map, const ConvLayerParams& p,
                   Matrix* grad_in, ConvLayerParams* grad_params);

// Submanifold convolution: output coordinates equal input coordinates.
SparseTensor sconv_forward(const SparseTensor& t, const ConvLayerParams& p);

// Strided 2^3 convolution onto the parent coordinates.
SparseTensor sconv_down2_forward(const SparseTensor& t, const ConvLayerParams& p);

// Transposed 2^3 convolution. Without a target every input voxel generates
// its 8 children; with a target the output is evaluated only there.
SparseTensor tsconv_up2_forward(const SparseTensor& t, const ConvLayerParams& p,
                                CoordSetPtr target = nullptr);

}  // namespace spcg
