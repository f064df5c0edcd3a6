#include "spcg/adam.h"

#include <cmath>
#include <stdexcept>

namespace spcg {

namespace {

void update(std::span<double> params, std::span<const double> grads,
            double* m, double* v, double lr, double c1, double c2,
            const AdamConfig& cfg)
{
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

}  // namespace

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, double lr, const AdamConfig& cfg)
{
  if (params.size() != grads.size())
    throw std::invalid_argument("adam: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam: state size mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  update(params, grads, state.m.data(), state.v.data(), lr, c1, c2, cfg);
}

void adam_step(NetworkParams& net, NetworkParams& grads, AdamState& state,
               double lr, const AdamConfig& cfg)
{
  auto pb = parameter_blocks(net);
  auto gb = parameter_blocks(grads);
  if (pb.size() != gb.size())
    throw std::invalid_argument("adam: gradient layout mismatch");
  size_t total = 0;
  for (size_t i = 0; i < pb.size(); ++i) {
    if (pb[i].size() != gb[i].size())
      throw std::invalid_argument("adam: gradient block mismatch");
    total += pb[i].size();
  }
  if (state.m.empty()) {
    state.m.assign(total, 0.0);
    state.v.assign(total, 0.0);
  }
  if (state.m.size() != total)
    throw std::invalid_argument("adam: state size mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  size_t off = 0;
  for (size_t i = 0; i < pb.size(); ++i) {
    update(pb[i], gb[i], state.m.data() + off, state.v.data() + off, lr, c1, c2,
           cfg);
    off += pb[i].size();
  }
}

}  // namespace spcg
