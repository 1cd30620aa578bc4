#pragma once

#include <span>
#include <vector>

#include "graphreason/tensor.hpp"

namespace graphreason {

struct OptimizerState {
  Scalar learning_rate = 5e-4;
  Scalar momentum = 0.9;
  Scalar weight_decay = 1e-4;
  Scalar clip_norm = 0;  // global gradient-norm cap; 0 disables
  std::vector<Tensor> velocity;  // one per parameter, allocated on first step
};

// g <- g * min(1, clip_norm / |g|) over all parameters when clip_norm > 0;
// v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v.
// Returns |g| before clipping.
Scalar sgd_step(std::span<Tensor> params, OptimizerState& state);

}  // namespace graphreason
