#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darht/adv_train.hpp"
#include "darht/attacks.hpp"
#include "darht/data.hpp"
#include "darht/model.hpp"
#include "darht/optim.hpp"
#include "darht/rng.hpp"

namespace darht {

// Single-example loss terms on plain vectors.

Tensor one_hot(std::size_t label, std::size_t classes);

// -sum_k y_k log(max(p_k, 1e-12)). Throws UsageError unless y sums to 1.
double classification_loss(const Tensor& probs, const Tensor& y_onehot);

// KL(softmax(block) || softmax(teacher_logits)).
double per_teacher_kl(const Tensor& block, const Tensor& teacher_logits);

// w_j = softmax(-loss_j).
Tensor teacher_weights(std::span<const double> teacher_ce_losses);

double distillation_loss(std::span<const Tensor> blocks, std::span<const Tensor> teacher_logits,
                         const Tensor& weights);

// Batched, differentiable versions. The feature map is [B x K*J] and block j
// occupies columns [jK, (j+1)K).

// [B x K] student-feature block vs fixed teacher logits -> [B]
Var per_teacher_kl(Var block, const Tensor& teacher_logits);

struct LossTerms {
  Var total;
  Var classification;
  Var distillation;
  Tensor weights;  // [J]
  std::vector<double> teacher_ce;  // batch-mean CE of each teacher
};

// L_C + L_K, both averaged over the batch. Teacher weights come from the
// batch-mean cross-entropy of each teacher on the same labels.
LossTerms total_loss(const ForwardVars& student, std::span<const Tensor> teacher_logits,
                     std::span<const std::size_t> labels);

struct TeacherInfo {
  std::string architecture;
  TrainAlgorithm algorithm = TrainAlgorithm::Standard;
  std::size_t tau = 0;
};

// J frozen teachers sharing input shape and K. Only const access is given
// out; parameter checksums are recorded on construction.
class TeacherEnsemble {
 public:
  TeacherEnsemble(std::vector<Model> teachers, std::vector<TeacherInfo> info);

  std::size_t size() const { return teachers_.size(); }
  std::size_t classes() const { return teachers_.front().classes(); }
  const Shape& input_shape() const { return teachers_.front().spec().input_shape; }
  const Model& teacher(std::size_t j) const { return teachers_.at(j); }
  const TeacherInfo& info(std::size_t j) const { return info_.at(j); }

  const std::vector<std::uint64_t>& recorded_checksums() const { return checksums_; }
  std::vector<std::uint64_t> checksums() const;
  bool unchanged() const { return checksums() == checksums_; }

  // Logits of every teacher on the batch. Appends the content hash of the
  // input each teacher saw when `seen` is given.
  std::vector<Tensor> logits(const Tensor& x, std::vector<std::uint64_t>* seen = nullptr) const;

 private:
  std::vector<Model> teachers_;
  std::vector<TeacherInfo> info_;
  std::vector<std::uint64_t> checksums_;
};

enum class InnerAttack { Fat, Pgd };

struct DistillConfig {
  std::size_t epochs = 10;
  std::size_t mc_passes = 4;
  double adversarial_probability = 0.5;
  InnerAttack inner = InnerAttack::Fat;
  std::size_t tau = 1;
  AttackConfig attack;
  SgdConfig sgd;
  LrSchedule schedule = LrSchedule::constant(0.02f);
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // Per-epoch clean / PGD accuracy is measured on up to this many examples.
  std::size_t log_examples = 200;
  std::size_t eval_mc_passes = 8;

  void validate() const;
};

struct StepLog {
  double total = 0.0;
  double classification = 0.0;
  double distillation = 0.0;
  std::vector<double> weights;
  std::size_t adversarial = 0;  // examples drawn from the adversarial branch
  std::uint64_t student_input_hash = 0;
  std::vector<std::uint64_t> teacher_input_hashes;
};

// One step of the training algorithm on a batch: generate x_adv against the
// current student, pick adversarial or clean per example, feed the same
// batch to the MC-averaged student and every teacher, and take one SGD step
// on the student. `rng` drives the per-example coin flips; `step_seed` the
// attack and dropout streams.
StepLog darht_train_step(Model& student, const TeacherEnsemble& teachers, const Tensor& x,
                         std::span<const std::size_t> labels, const DistillConfig& cfg, OptimState& optim, Rng& rng,
                         std::uint64_t step_seed);

struct DistillEpochLog {
  std::size_t epoch = 0;
  float lr = 0.0f;
  double classification = 0.0;
  double distillation = 0.0;
  std::vector<double> weights;
  double clean_acc = 0.0;
  double pgd_acc = 0.0;
};

// Runs cfg.epochs passes of darht_train_step over shuffled batches. Epoch
// accuracies are measured on `monitor` when given, else on the head of
// `data`.
std::vector<DistillEpochLog> darht_train(Model& student, const TeacherEnsemble& teachers, const Dataset& data,
                                         const DistillConfig& cfg, const Dataset* monitor = nullptr);

// Header epoch,lr,loss_c,loss_k,w_1..w_J,clean_acc,pgd_acc.
void write_distill_csv(std::ostream& out, const std::vector<DistillEpochLog>& log);

}  // namespace darht
