#include "graphreason/optim.hpp"

#include <cmath>
#include <string>

#include "graphreason/errors.hpp"

namespace graphreason {

Scalar sgd_step(std::span<Tensor> params, OptimizerState& state) {
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const auto& p : params) state.velocity.emplace_back(p.shape());
  }
  if (state.velocity.size() != params.size()) {
    throw ConsistencyError("sgd_step: optimizer tracks " + std::to_string(state.velocity.size()) +
                           " parameters, got " + std::to_string(params.size()));
  }
  Scalar sq = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw ContractError("sgd_step: parameter " + std::to_string(i) + " has no gradient");
    for (const Scalar g : params[i].grad()) sq += g * g;
  }
  const Scalar norm = std::sqrt(sq);
  const Scalar scale = state.clip_norm > 0 && norm > state.clip_norm ? state.clip_norm / norm : Scalar{1};
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Tensor& v = state.velocity[i];
    if (v.shape() != p.shape()) {
      throw ConsistencyError("sgd_step: velocity " + shape_string(v.shape()) + " vs parameter " +
                             shape_string(p.shape()));
    }
    auto g = p.grad();
    auto pd = p.data();
    auto vd = v.data();
    for (std::size_t k = 0; k < pd.size(); ++k) {
      vd[k] = state.momentum * vd[k] + (scale * g[k] + state.weight_decay * pd[k]);
      pd[k] -= state.learning_rate * vd[k];
    }
  }
  return norm;
}

}  // namespace graphreason
