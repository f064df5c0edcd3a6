#include "spcg/tape.h"

#include <cmath>
#include <stdexcept>

namespace spcg {

Tape::Var Tape::push(Matrix value, bool requires_grad,
                     std::function<void(Tape&, const Node&)> back)
{
  nodes_.push_back({std::move(value), Matrix(), requires_grad, std::move(back)});
  return {int(nodes_.size()) - 1};
}

Matrix& Tape::grad_ref(int id)
{
  Node& n = nodes_[id];
  if (n.grad.size() == 0 && n.value.size() != 0)
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Tape::Var Tape::input(Matrix value, bool requires_grad)
{
  return push(std::move(value), requires_grad, nullptr);
}

Tape::Var Tape::conv(Var x, std::shared_ptr<const KernelMap> map,
                     const ConvLayerParams& p, ConvLayerParams* grad)
{
  Matrix out = conv_apply(value(x), *map, p);
  const bool rg = requires_grad(x) || grad != nullptr;
  return push(std::move(out), rg,
              [x, map = std::move(map), &p, grad](Tape& t, const Node& self) {
                Matrix* gin = t.requires_grad(x) ? &t.grad_ref(x.id) : nullptr;
                conv_backward(t.value(x), self.grad, *map, p, gin, grad);
              });
}

Tape::Var Tape::relu(Var x)
{
  Matrix out = value(x).cwiseMax(0.0);
  return push(std::move(out), requires_grad(x), [x](Tape& t, const Node& self) {
    if (!t.requires_grad(x))
      return;
    t.grad_ref(x.id).array() +=
      (t.value(x).array() > 0.0).select(self.grad.array(), 0.0);
  });
}

Tape::Var Tape::sigmoid(Var x)
{
  Matrix out = (1.0 / (1.0 + (-value(x).array()).exp())).matrix();
  return push(std::move(out), requires_grad(x), [x](Tape& t, const Node& self) {
    if (!t.requires_grad(x))
      return;
    t.grad_ref(x.id).array() +=
      self.grad.array() * self.value.array() * (1.0 - self.value.array());
  });
}

Tape::Var Tape::add(Var a, Var b)
{
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw std::invalid_argument("add: shape mismatch");
  Matrix out = value(a) + value(b);
  return push(std::move(out), requires_grad(a) || requires_grad(b),
              [a, b](Tape& t, const Node& self) {
                if (t.requires_grad(a))
                  t.grad_ref(a.id) += self.grad;
                if (t.requires_grad(b))
                  t.grad_ref(b.id) += self.grad;
              });
}

Tape::Var Tape::concat(Var a, Var b)
{
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.rows() != vb.rows())
    throw std::invalid_argument("concat: row mismatch");
  Matrix out(va.rows(), va.cols() + vb.cols());
  out.leftCols(va.cols()) = va;
  out.rightCols(vb.cols()) = vb;
  return push(std::move(out), requires_grad(a) || requires_grad(b),
              [a, b](Tape& t, const Node& self) {
                const auto ca = t.value(a).cols();
                const auto cb = t.value(b).cols();
                if (t.requires_grad(a))
                  t.grad_ref(a.id) += self.grad.leftCols(ca);
                if (t.requires_grad(b))
                  t.grad_ref(b.id) += self.grad.rightCols(cb);
              });
}

Tape::Var Tape::gather(Var x, std::vector<int32_t> rows)
{
  const Matrix& vx = value(x);
  Matrix out(Eigen::Index(rows.size()), vx.cols());
  for (size_t i = 0; i < rows.size(); ++i)
    out.row(Eigen::Index(i)) = vx.row(rows[i]);
  return push(std::move(out), requires_grad(x),
              [x, rows = std::move(rows)](Tape& t, const Node& self) {
                if (!t.requires_grad(x))
                  return;
                Matrix& g = t.grad_ref(x.id);
                for (size_t i = 0; i < rows.size(); ++i)
                  g.row(rows[i]) += self.grad.row(Eigen::Index(i));
              });
}

Tape::Var Tape::merge_rows(Var a, Var b, std::vector<int32_t> index)
{
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.cols() != vb.cols())
    throw std::invalid_argument("merge_rows: channel mismatch");
  Matrix out(Eigen::Index(index.size()), va.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    const int32_t idx = index[i];
    if (idx >= 0)
      out.row(Eigen::Index(i)) = va.row(idx);
    else
      out.row(Eigen::Index(i)) = vb.row(-1 - idx);
  }
  return push(std::move(out), requires_grad(a) || requires_grad(b),
              [a, b, index = std::move(index)](Tape& t, const Node& self) {
                const bool ga = t.requires_grad(a);
                const bool gb = t.requires_grad(b);
                for (size_t i = 0; i < index.size(); ++i) {
                  const int32_t idx = index[i];
                  if (idx >= 0 && ga)
                    t.grad_ref(a.id).row(idx) += self.grad.row(Eigen::Index(i));
                  else if (idx < 0 && gb)
                    t.grad_ref(b.id).row(-1 - idx) +=
                      self.grad.row(Eigen::Index(i));
                }
              });
}

Tape::Var Tape::add_constant(Var x, Matrix c)
{
  Matrix out = value(x) + c;
  return push(std::move(out), requires_grad(x), [x](Tape& t, const Node& self) {
    if (t.requires_grad(x))
      t.grad_ref(x.id) += self.grad;
  });
}

void Tape::seed(Var v, const Matrix& g)
{
  Matrix& dst = grad_ref(v.id);
  if (dst.rows() != g.rows() || dst.cols() != g.cols())
    throw std::invalid_argument("seed gradient shape mismatch");
  dst += g;
}

void Tape::backward()
{
  for (size_t i = nodes_.size(); i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || !n.back || n.grad.size() == 0)
      continue;
    n.back(*this, n);
  }
}

}  // namespace spcg
