#include "spcg/conv.h"

#include <stdexcept>

namespace spcg {

namespace {

Matrix gather_rows(const Matrix& src, const std::vector<int32_t>& rows)
{
  Matrix out(Eigen::Index(rows.size()), src.cols());
  for (size_t i = 0; i < rows.size(); ++i)
    out.row(Eigen::Index(i)) = src.row(rows[i]);
  return out;
}

void check_layer(const Matrix& in, const KernelMap& map, const ConvLayerParams& p)
{
  if (p.weights.empty() || p.weights.size() != p.offsets.size())
    throw std::invalid_argument("convolution layer without weights");
  if (map.offsets.size() != p.offsets.size())
    throw std::invalid_argument("kernel map does not match layer offsets");
  if (in.cols() != p.in_channels())
    throw std::invalid_argument(
      "channel mismatch: input has " + std::to_string(in.cols())
      + " channels, layer expects " + std::to_string(p.in_channels()));
  if (size_t(in.rows()) != map.in_rows)
    throw std::invalid_argument("input rows do not match kernel map");
}

}  // namespace

int ConvLayerParams::kernel_size() const
{
  if (stride != Stride::None)
    return 2;
  int k = 1;
  while (size_t(k) * k * k < offsets.size())
    k += 2;
  return k;
}

ConvLayerParams ConvLayerParams::zeros(Stride stride, int kernel_size,
                                       int in_channels, int out_channels)
{
  ConvLayerParams p;
  p.stride = stride;
  if (stride == Stride::None)
    p.offsets = cube_offsets(kernel_size);
  else
    p.offsets.assign(child_offsets().begin(), child_offsets().end());
  p.weights.assign(p.offsets.size(), Matrix::Zero(in_channels, out_channels));
  p.bias = RowVector::Zero(out_channels);
  return p;
}

void ConvLayerParams::set_zero()
{
  for (auto& w : weights)
    w.setZero();
  bias.setZero();
}

size_t ConvLayerParams::parameter_count() const
{
  size_t n = size_t(bias.size());
  for (const auto& w : weights)
    n += size_t(w.size());
  return n;
}

Matrix conv_apply(const Matrix& in, const KernelMap& map,
                  const ConvLayerParams& p)
{
  check_layer(in, map, p);
  Matrix out(Eigen::Index(map.out_rows), p.out_channels());
  out.rowwise() = p.bias;
  for (size_t k = 0; k < map.offsets.size(); ++k) {
    if (int(k) == map.identity_offset) {
      out.noalias() += in * p.weights[k];
      continue;
    }
    const auto& pairs = map.pairs[k];
    if (pairs.in.empty())
      continue;
    Matrix prod = gather_rows(in, pairs.in) * p.weights[k];
    for (size_t j = 0; j < pairs.out.size(); ++j)
      out.row(pairs.out[j]) += prod.row(Eigen::Index(j));
  }
  return out;
}

void conv_backward(const Matrix& in, const Matrix& grad_out,
                   const KernelMap& map, const ConvLayerParams& p,
                   Matrix* grad_in, ConvLayerParams* grad_params)
{
  if (grad_params)
    grad_params->bias += grad_out.colwise().sum();
  for (size_t k = 0; k < map.offsets.size(); ++k) {
    if (int(k) == map.identity_offset) {
      if (grad_in)
        grad_in->noalias() += grad_out * p.weights[k].transpose();
      if (grad_params)
        grad_params->weights[k].noalias() += in.transpose() * grad_out;
      continue;
    }
    const auto& pairs = map.pairs[k];
    if (pairs.in.empty())
      continue;
    Matrix g = gather_rows(grad_out, pairs.out);
    if (grad_in) {
      Matrix back = g * p.weights[k].transpose();
      for (size_t j = 0; j < pairs.in.size(); ++j)
        grad_in->row(pairs.in[j]) += back.row(Eigen::Index(j));
    }
    if (grad_params)
      grad_params->weights[k].noalias() +=
        gather_rows(in, pairs.in).transpose() * g;
  }
}

SparseTensor sconv_forward(const SparseTensor& t, const ConvLayerParams& p)
{
  if (p.stride != Stride::None)
    throw std::invalid_argument("sconv_forward requires an unstrided layer");
  auto map = t.coords().submanifold_map(p.kernel_size());
  return SparseTensor(t.scale(), t.coord_set(), conv_apply(t.features(), *map, p),
                      t.role());
}

SparseTensor sconv_down2_forward(const SparseTensor& t, const ConvLayerParams& p)
{
  if (p.stride != Stride::Down2)
    throw std::invalid_argument("sconv_down2_forward requires a down2 layer");
  if (t.scale() < 1)
    throw std::invalid_argument("cannot downscale root");
  auto parents = parents_of(t.coords());
  KernelMap map = build_down2_map(t.coords(), *parents);
  return SparseTensor(t.scale() - 1, parents, conv_apply(t.features(), map, p),
                      t.role());
}

SparseTensor tsconv_up2_forward(const SparseTensor& t, const ConvLayerParams& p,
                                CoordSetPtr target)
{
  if (p.stride != Stride::Up2)
    throw std::invalid_argument("tsconv_up2_forward requires an up2 layer");
  if (!target)
    target = children_of(t.coords());
  KernelMap map = build_up2_map(t.coords(), *target);
  return SparseTensor(t.scale() + 1, target, conv_apply(t.features(), map, p),
                      OccupancyRole::MPPOV);
}

}  // namespace spcg
