#include "darht/optim.hpp"

#include "darht/errors.hpp"

namespace darht {

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimState& state) {
  if (params.size() != grads.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw DimensionError("sgd_step: gradient shape " + shape_str(grads[i].shape()) + " != parameter shape " +
                           shape_str(params[i].shape()));
    }
  }
  if (state.velocity_.empty()) {
    for (const auto& p : params) state.velocity_.emplace_back(p.shape());
  } else if (state.velocity_.size() != params.size()) {
    throw DimensionError("sgd_step: optimizer state was built for a different parameter list");
  }
  const SgdConfig& c = state.config_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].data();
    auto g = grads[i].data();
    auto v = state.velocity_[i].data();
    if (v.size() != theta.size()) throw DimensionError("sgd_step: velocity shape mismatch");
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = c.momentum * v[k] + g[k] + c.weight_decay * theta[k];
      theta[k] -= c.learning_rate * v[k];
    }
    require_finite(params[i], "sgd_step");
  }
}

}  // namespace darht
