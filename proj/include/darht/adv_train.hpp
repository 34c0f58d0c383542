#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "darht/attacks.hpp"
#include "darht/data.hpp"
#include "darht/model.hpp"
#include "darht/optim.hpp"

namespace darht {

enum class WarmupShape { Cosine, Linear };

// Learning rate per epoch. WarmupMultistep ramps from initial_lr to peak_lr
// over warmup_epochs, then multiplies by decay_factor at each decay epoch.
// Constant always returns peak_lr.
struct LrSchedule {
  enum class Kind { Constant, WarmupMultistep };

  Kind kind = Kind::WarmupMultistep;
  WarmupShape warmup = WarmupShape::Cosine;
  float initial_lr = 0.002f;
  float peak_lr = 0.1f;
  std::size_t warmup_epochs = 20;
  std::vector<std::size_t> decay_epochs{60, 80};
  float decay_factor = 0.1f;

  static LrSchedule constant(float lr);
  void validate() const;
};

float lr_at(const LrSchedule& schedule, std::size_t epoch);

enum class TrainAlgorithm { Standard, PgdAt, Fat, Trades };

std::string to_string(TrainAlgorithm algorithm);
TrainAlgorithm parse_train_algorithm(const std::string& name);

struct TeacherTrainConfig {
  TrainAlgorithm algorithm = TrainAlgorithm::Standard;
  std::size_t tau = 1;  // FAT misclassification budget
  float beta = 6.0f;    // TRADES KL weight
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  SgdConfig sgd;  // learning_rate is overridden by the schedule
  LrSchedule schedule = LrSchedule::constant(0.1f);
  AttackConfig attack;  // inner maximization
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  float lr = 0.0f;
  double loss = 0.0;
  double clean_acc = 0.0;
};

// CSV with header epoch,lr,loss,clean_acc.
void write_epoch_csv(std::ostream& out, const std::vector<EpochLog>& log);

// Early-stopped PGD: an example keeps stepping until its iterate has been
// misclassified tau times, and stops at the next misclassified check.
AttackResult fat_generate(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                          std::size_t tau, const AttackConfig& cfg);

// Mean CE(softmax(clean), y) + beta * mean KL(softmax(adv) || softmax(clean)).
// Gradients flow through both logit sets.
Var trades_loss(Var clean_logits, Var adv_logits, std::span<const std::size_t> labels, float beta);
double trades_loss(const Model& model, const Tensor& x, const Tensor& x_adv, std::span<const std::size_t> labels,
                   float beta);

// Trains `model` in place and returns one log row per epoch.
std::vector<EpochLog> train_teacher(Model& model, const TeacherTrainConfig& cfg, const Dataset& data);

double accuracy(const Model& model, const Dataset& data, InferenceMode mode = {});

}  // namespace darht
