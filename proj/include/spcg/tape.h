#pragma once

#include "spcg/conv.h"
#include "spcg/kernel_map.h"
#include "spcg/matrix.h"

#include <functional>
#include <memory>
#include <vector>

namespace spcg {

// Reverse-mode recorder for feature-matrix operations. Every op appends a
// node holding its value and a closure that pushes its gradient into its
// inputs; backward() walks the nodes in reverse.
class Tape {
public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Var input(Matrix value, bool requires_grad = false);

  // Parameter gradients accumulate into `grad` when it is non-null.
  Var conv(Var x, std::shared_ptr<const KernelMap> map,
           const ConvLayerParams& p, ConvLayerParams* grad);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var add(Var a, Var b);
  Var concat(Var a, Var b);
  // out.row(i) = x.row(rows[i]).
  Var gather(Var x, std::vector<int32_t> rows);
  // out.row(i) = a.row(idx) for idx >= 0, b.row(-1 - idx) otherwise.
  Var merge_rows(Var a, Var b, std::vector<int32_t> index);
  // x + c with identity gradient (additive noise, straight-through rounding).
  Var add_constant(Var x, Matrix c);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Adds g into the gradient of v; call before backward().
  void seed(Var v, const Matrix& g);
  // Gradient of v after backward(); zero-sized when nothing reached v.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

  void backward();
  size_t size() const { return nodes_.size(); }

private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Node&)> back;
  };

  Var push(Matrix value, bool requires_grad,
           std::function<void(Tape&, const Node&)> back);
  Matrix& grad_ref(int id);

  std::vector<Node> nodes_;
};

}  // namespace spcg
