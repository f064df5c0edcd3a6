#pragma once

#include "spcg/network.h"

#include <cstdint>
#include <span>
#include <vector>

namespace spcg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment estimates; sized lazily on the first step.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  int64_t step = 0;
};

// One bias-corrected Adam update of `params` (flattened) in place.
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, double lr, const AdamConfig& cfg = {});

// Adam over every parameter block of a network.
void adam_step(NetworkParams& net, NetworkParams& grads, AdamState& state,
               double lr, const AdamConfig& cfg = {});

}  // namespace spcg
