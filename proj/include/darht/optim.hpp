#pragma once

#include <span>
#include <vector>

#include "darht/tensor.hpp"

namespace darht {

struct SgdConfig {
  float learning_rate = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 2e-4f;
};

// Momentum SGD with L2 weight decay folded into the gradient:
//   v <- mu * v + g + wd * theta
//   theta <- theta - lr * v
class OptimState {
 public:
  OptimState() = default;
  explicit OptimState(SgdConfig config) : config_(config) {}

  const SgdConfig& config() const { return config_; }
  void set_learning_rate(float lr) { config_.learning_rate = lr; }

  // Velocity buffers, created lazily to mirror parameter shapes.
  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  friend void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimState& state);

  SgdConfig config_;
  std::vector<Tensor> velocity_;
};

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimState& state);

}  // namespace darht
