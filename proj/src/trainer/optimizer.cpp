#include <cmath>

#include "sphereat/trainer/trainer.hpp"

namespace sphereat {

void sgd_momentum_step(ModelParams& params, const std::vector<diff::Tensor>& grads, OptimizerState& state, double lr,
                       double momentum, double weight_decay, const std::vector<bool>& frozen) {
  const auto n = params.blocks.size();
  if (grads.size() != n) {
    throw ContractViolation("optimizer got " + std::to_string(grads.size()) + " gradients for " + std::to_string(n) +
                            " parameter blocks");
  }
  if (!frozen.empty() && frozen.size() != n) throw ContractViolation("optimizer frozen mask has the wrong length");
  for (std::size_t k = 0; k < n; ++k) {
    if (grads[k].shape() != params.blocks[k].value.shape()) {
      throw ContractViolation("gradient shape mismatch for " + params.blocks[k].name);
    }
    if (!grads[k].all_finite()) throw NumericError("non-finite gradient for " + params.blocks[k].name);
  }
  if (state.velocity.empty()) {
    for (const auto& b : params.blocks) state.velocity.emplace_back(b.value.shape());
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!frozen.empty() && frozen[k]) continue;
    auto& theta = params.blocks[k].value.storage();
    auto& v = state.velocity[k].storage();
    const auto& g = grads[k].storage();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = momentum * v[i] + g[i] + weight_decay * theta[i];
      theta[i] -= lr * v[i];
    }
  }
}

}  // namespace sphereat
