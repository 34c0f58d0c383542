#include "darht/adv_train.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "darht/errors.hpp"
#include "darht/ops.hpp"
#include "darht/rng.hpp"

namespace darht {

LrSchedule LrSchedule::constant(float lr) {
  LrSchedule s;
  s.kind = Kind::Constant;
  s.initial_lr = lr;
  s.peak_lr = lr;
  s.warmup_epochs = 0;
  s.decay_epochs.clear();
  return s;
}

void LrSchedule::validate() const {
  if (!(peak_lr > 0.0f) || !(initial_lr > 0.0f)) throw UsageError("learning rates must be positive");
  if (!(decay_factor > 0.0f && decay_factor <= 1.0f)) throw UsageError("decay factor must lie in (0,1]");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i)
    if (decay_epochs[i] <= decay_epochs[i - 1]) throw UsageError("decay epochs must be strictly increasing");
}

float lr_at(const LrSchedule& s, std::size_t epoch) {
  if (s.kind == LrSchedule::Kind::Constant) return s.peak_lr;
  if (epoch < s.warmup_epochs) {
    const double t = static_cast<double>(epoch) / static_cast<double>(s.warmup_epochs);
    const double ramp = s.warmup == WarmupShape::Cosine ? 0.5 * (1.0 - std::cos(std::numbers::pi * t)) : t;
    return static_cast<float>(s.initial_lr + (static_cast<double>(s.peak_lr) - s.initial_lr) * ramp);
  }
  double lr = s.peak_lr;
  for (std::size_t d : s.decay_epochs)
    if (epoch >= d) lr *= s.decay_factor;
  return static_cast<float>(lr);
}

std::string to_string(TrainAlgorithm algorithm) {
  switch (algorithm) {
    case TrainAlgorithm::Standard: return "standard";
    case TrainAlgorithm::PgdAt: return "pgd-at";
    case TrainAlgorithm::Fat: return "fat";
    case TrainAlgorithm::Trades: return "trades";
  }
  return "?";
}

TrainAlgorithm parse_train_algorithm(const std::string& name) {
  for (auto a : {TrainAlgorithm::Standard, TrainAlgorithm::PgdAt, TrainAlgorithm::Fat, TrainAlgorithm::Trades})
    if (to_string(a) == name) return a;
  throw UsageError("unknown training algorithm '" + name + "'");
}

void TeacherTrainConfig::validate() const {
  if (algorithm == TrainAlgorithm::Fat && tau < 1) throw UsageError("FAT needs tau >= 1");
  if (algorithm == TrainAlgorithm::Trades && !(beta >= 0.0f)) throw UsageError("TRADES needs beta >= 0");
  if (batch_size == 0) throw UsageError("batch size must be positive");
  schedule.validate();
  attack.validate();
}

void write_epoch_csv(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,lr,loss,clean_acc\n";
  char line[128];
  for (const auto& row : log) {
    std::snprintf(line, sizeof line, "%zu,%.6g,%.6f,%.6f\n", row.epoch, static_cast<double>(row.lr), row.loss,
                  row.clean_acc);
    out << line;
  }
}

AttackResult fat_generate(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                          std::size_t tau, const AttackConfig& cfg) {
  if (tau < 1) throw UsageError("FAT needs tau >= 1");
  return pgd_objective(model, x, labels, cfg, AttackObjective{LossKind::CrossEntropy, 0.0f, {}}, tau);
}

Var trades_loss(Var clean_logits, Var adv_logits, std::span<const std::size_t> labels, float beta) {
  if (clean_logits.shape() != adv_logits.shape()) throw DimensionError("TRADES logits differ in shape");
  const Var ce = mean(cross_entropy(clean_logits, labels));
  if (beta == 0.0f) return ce;
  const Var log_p = log_softmax(adv_logits);
  const Var kl = row_sum(mul(softmax(adv_logits), sub(log_p, log_softmax(clean_logits))));
  return add(ce, scale(mean(kl), beta));
}

double trades_loss(const Model& model, const Tensor& x, const Tensor& x_adv, std::span<const std::size_t> labels,
                   float beta) {
  if (x.shape() != x_adv.shape()) throw DimensionError("x and x_adv differ in shape");
  Tape tape;
  const auto params = model.bind(tape, false);
  const Var clean = model.forward(tape, params, tape.constant(model.as_batch(x)), std::nullopt).logits;
  const Var adv = model.forward(tape, params, tape.constant(model.as_batch(x_adv)), std::nullopt).logits;
  return trades_loss(clean, adv, labels, beta).value().item();
}

double accuracy(const Model& model, const Dataset& data, InferenceMode mode) {
  if (data.size() == 0) throw UsageError("accuracy of an empty dataset");
  const auto pred = predict(model, data.inputs, mode);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<EpochLog> train_teacher(Model& model, const TeacherTrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  if (data.size() == 0) throw UsageError("teacher training needs data");
  data.validate();
  if (data.classes != model.classes())
    throw UsageError("dataset has K=" + std::to_string(data.classes) + " but model has K=" +
                     std::to_string(model.classes()));

  std::vector<EpochLog> log;
  OptimState optim(cfg.sgd);
  Rng order_rng(derive_seed(cfg.seed, 0));
  const std::uint64_t attack_base = derive_seed(cfg.seed, 1);
  const std::uint64_t dropout_base = derive_seed(cfg.seed, 2);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = lr_at(cfg.schedule, epoch);
    optim.set_learning_rate(lr);
    order_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor x = data.inputs.gather_rows(idx);
      const auto y = data.labels_at(idx);

      AttackConfig attack = cfg.attack;
      attack.seed = derive_seed(attack_base, step);
      const LogitFn frozen = logit_fn(model);
      Tensor x_train = x;
      Tensor reference;
      switch (cfg.algorithm) {
        case TrainAlgorithm::Standard: break;
        case TrainAlgorithm::PgdAt: x_train = pgd(frozen, x, y, attack).x_adv; break;
        case TrainAlgorithm::Fat: x_train = fat_generate(frozen, x, y, cfg.tau, attack).x_adv; break;
        case TrainAlgorithm::Trades: {
          reference = predict_logits(model, x);
          x_train = pgd_objective(frozen, x, y, attack, AttackObjective{LossKind::KlDivergence, 0.0f, reference})
                        .x_adv;
          break;
        }
      }

      Tape tape;
      const auto params = model.bind(tape, true);
      const std::uint64_t dropout_seed = derive_seed(dropout_base, step);
      Var loss;
      if (cfg.algorithm == TrainAlgorithm::Trades) {
        const Var clean = model.forward(tape, params, tape.constant(x), dropout_seed).logits;
        const Var adv = model.forward(tape, params, tape.constant(x_train), dropout_seed).logits;
        loss = trades_loss(clean, adv, y, cfg.beta);
      } else {
        loss = mean(cross_entropy(model.forward(tape, params, tape.constant(x_train), dropout_seed).logits, y));
      }
      loss_sum += static_cast<double>(loss.value().item()) * static_cast<double>(idx.size());
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (const Var& p : params) grads.push_back(p.grad());
      sgd_step(model.parameters(), grads, optim);
    }
    log.push_back({epoch, lr, loss_sum / static_cast<double>(data.size()), accuracy(model, data)});
  }
  return log;
}

}  // namespace darht
