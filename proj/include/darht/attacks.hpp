#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darht/model.hpp"
#include "darht/tensor.hpp"

namespace darht {

enum class LossKind { CrossEntropy, CwMargin, KlDivergence };

// L-infinity attack budget in [0,1] pixel units.
struct AttackConfig {
  float epsilon = 8.0f / 255.0f;
  float step_size = 2.0f / 255.0f;
  std::size_t steps = 10;
  float random_start = 0.001f;  // half-width of the uniform random start
  LossKind loss = LossKind::CrossEntropy;
  std::size_t query_budget = 0;  // black-box queries per example
  std::uint64_t seed = 0;
  float kappa = 0.0f;  // CW confidence

  void validate() const;
};

// Results for a batch; vectors are indexed by example.
struct AttackResult {
  Tensor x_adv;
  std::vector<std::uint8_t> success;  // prediction differs from the label
  std::vector<std::size_t> queries;   // model evaluations spent
  std::vector<std::size_t> iterations;
  std::vector<double> final_loss;
  // Loss of every visited iterate (APGD only).
  std::vector<std::vector<double>> loss_history;
};

// Black-box access: class probabilities of a batch. There is no gradient
// channel on this interface.
using ProbFn = std::function<Tensor(const Tensor&)>;

ProbFn prob_fn(const Model& model, InferenceMode mode = {});

// What a gradient attack ascends. `reference_logits` is required for the KL
// objective, KL(softmax(f(x_adv)) || softmax(reference)).
struct AttackObjective {
  LossKind kind = LossKind::CrossEntropy;
  float kappa = 0.0f;
  Tensor reference_logits;
};

// Per-example attack loss, [B x K] logits -> [B].
Var attack_loss(Var logits, std::span<const std::size_t> labels, const AttackObjective& objective);

// Gradient of the summed objective with respect to the input batch.
struct InputGradient {
  Tensor grad;
  Tensor logits;
  std::vector<double> loss;
};
InputGradient input_gradient(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                             const AttackObjective& objective);

AttackResult fgsm(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels, float epsilon);

AttackResult pgd(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                 const AttackConfig& cfg);

// PGD ascent on an explicit objective. With `early_stop_tau`, an example
// stops once its iterate is found misclassified after the tau-th tolerated
// misclassification (friendly early stopping).
AttackResult pgd_objective(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                           const AttackConfig& cfg, const AttackObjective& objective,
                           std::optional<std::size_t> early_stop_tau = std::nullopt);

// PGD on the CW margin loss -max(z_y - max_{k != y} z_k, -kappa).
AttackResult cw_linf(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                     const AttackConfig& cfg);

// Simplified Auto-PGD: momentum 0.75, initial step 2*epsilon, step halving
// at checkpoints {0.22, 0.44, 0.66, 0.88} * steps when fewer than 75% of the
// iterations since the previous checkpoint improved the loss. Returns the
// best-loss iterate.
AttackResult apgd(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                  const AttackConfig& cfg);

// L-infinity Square Attack driven by probabilities only. Patch fraction
// starts at 0.8 and halves at {0.1, 0.25, 0.5, 0.75} of the query budget.
AttackResult square_attack(const ProbFn& model, const Tensor& x, std::span<const std::size_t> labels,
                           const AttackConfig& cfg);

enum class AttackKind { Identity, Fgsm, Pgd, CwInf, Apgd, Square };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

// Dispatches one attack on a batch; white-box attacks use `model` logits and
// Square uses its softmax.
AttackResult run_attack(AttackKind kind, const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                        const AttackConfig& cfg);

}  // namespace darht
