#include "darht/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "darht/errors.hpp"
#include "darht/eval.hpp"
#include "darht/ops.hpp"

namespace darht {

Tensor one_hot(std::size_t label, std::size_t classes) {
  if (label >= classes) throw DimensionError("label out of range for one-hot");
  Tensor t({classes});
  t[label] = 1.0f;
  return t;
}

double classification_loss(const Tensor& probs, const Tensor& y_onehot) {
  if (probs.rank() != 1 || probs.shape() != y_onehot.shape())
    throw DimensionError("classification loss needs two vectors of length K");
  double mass = 0.0;
  for (float v : y_onehot.data()) {
    if (v < 0.0f) throw UsageError("one-hot label has a negative entry");
    mass += v;
  }
  if (std::abs(mass - 1.0) > 1e-6) throw UsageError("one-hot label does not sum to 1");
  double loss = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k)
    if (y_onehot[k] != 0.0f) loss -= y_onehot[k] * std::log(std::max(static_cast<double>(probs[k]), 1e-12));
  return loss;
}

namespace {

std::vector<double> log_softmax_d(const Tensor& z) {
  const double m = *std::max_element(z.data().begin(), z.data().end());
  double s = 0.0;
  for (float v : z.data()) s += std::exp(v - m);
  const double lse = m + std::log(s);
  std::vector<double> out;
  for (float v : z.data()) out.push_back(v - lse);
  return out;
}

void check_ensemble_fit(const Model& student, const TeacherEnsemble& teachers) {
  if (!student.has_head()) throw ConstructionError("student has no feature-map head");
  if (student.teacher_blocks() != teachers.size())
    throw ConstructionError("student head has " + std::to_string(student.teacher_blocks()) + " blocks for " +
                            std::to_string(teachers.size()) + " teachers");
  if (student.classes() != teachers.classes()) throw ConstructionError("student and teachers disagree on K");
  if (student.spec().input_shape != teachers.input_shape())
    throw ConstructionError("student and teachers disagree on input shape");
}

}  // namespace

double per_teacher_kl(const Tensor& block, const Tensor& teacher_logits) {
  if (block.rank() != 1 || block.shape() != teacher_logits.shape())
    throw DimensionError("KL needs a block and teacher logits of equal length K");
  const auto lp = log_softmax_d(block), lq = log_softmax_d(teacher_logits);
  double kl = 0.0;
  for (std::size_t k = 0; k < lp.size(); ++k) kl += std::exp(lp[k]) * (lp[k] - lq[k]);
  return std::max(kl, 0.0);
}

Tensor teacher_weights(std::span<const double> losses) {
  if (losses.empty()) throw UsageError("teacher weights need at least one loss");
  for (double l : losses)
    if (!std::isfinite(l) || l < 0.0) throw UsageError("teacher losses must be finite and >= 0");
  const double lo = *std::min_element(losses.begin(), losses.end());
  std::vector<double> e;
  double z = 0.0;
  for (double l : losses) {
    e.push_back(std::exp(-(l - lo)));
    z += e.back();
  }
  Tensor w({losses.size()});
  for (std::size_t j = 0; j < e.size(); ++j) w[j] = static_cast<float>(e[j] / z);
  return w;
}

double distillation_loss(std::span<const Tensor> blocks, std::span<const Tensor> teacher_logits,
                         const Tensor& weights) {
  if (blocks.size() != teacher_logits.size() || weights.size() != blocks.size())
    throw DimensionError("distillation needs one block and one weight per teacher");
  double loss = 0.0;
  for (std::size_t j = 0; j < blocks.size(); ++j) loss += weights[j] * per_teacher_kl(blocks[j], teacher_logits[j]);
  return loss;
}

Var per_teacher_kl(Var block, const Tensor& teacher_logits) {
  if (block.shape() != teacher_logits.shape()) throw DimensionError("feature block and teacher logits differ in shape");
  const Var log_q = block.tape().constant(log_softmax(teacher_logits));
  return row_sum(mul(softmax(block), sub(log_softmax(block), log_q)));
}

LossTerms total_loss(const ForwardVars& student, std::span<const Tensor> teacher_logits,
                     std::span<const std::size_t> labels) {
  if (!student.features) throw UsageError("total loss needs the student feature map");
  if (teacher_logits.empty()) throw UsageError("total loss needs at least one teacher");
  const Tensor& z = student.logits.value();
  const std::size_t batch = z.dim(0), k = z.dim(1), j_count = teacher_logits.size();
  if (student.features->shape() != Shape{batch, k * j_count})
    throw DimensionError("feature map " + shape_str(student.features->shape()) + " does not hold " +
                         std::to_string(j_count) + " blocks of " + std::to_string(k));

  LossTerms out;
  for (const Tensor& t : teacher_logits) {
    if (t.shape() != z.shape()) throw DimensionError("teacher logits must match the student logits");
    const Tensor lp = log_softmax(t);
    double ce = 0.0;
    for (std::size_t b = 0; b < batch; ++b) ce -= lp.at(b, labels[b]);
    out.teacher_ce.push_back(ce / static_cast<double>(batch));
  }
  out.weights = teacher_weights(out.teacher_ce);

  // Cross-entropy via log-sum-exp rather than log(clamp(softmax)).
  out.classification = mean(cross_entropy(student.logits, labels));
  Var distill;
  for (std::size_t j = 0; j < j_count; ++j) {
    const Var block = slice_cols(*student.features, j * k, (j + 1) * k);
    const Var term = scale(mean(per_teacher_kl(block, teacher_logits[j])), out.weights[j]);
    distill = j == 0 ? term : add(distill, term);
  }
  out.distillation = distill;
  out.total = add(out.classification, out.distillation);
  return out;
}

TeacherEnsemble::TeacherEnsemble(std::vector<Model> teachers, std::vector<TeacherInfo> info)
    : teachers_(std::move(teachers)), info_(std::move(info)) {
  if (teachers_.empty()) throw ConstructionError("an ensemble needs at least one teacher");
  if (info_.size() != teachers_.size()) throw ConstructionError("one metadata entry per teacher required");
  for (const Model& t : teachers_) {
    if (t.has_head()) throw ConstructionError("teachers must not carry a student head");
    if (t.classes() != teachers_.front().classes()) throw ConstructionError("teachers disagree on K");
    if (t.spec().input_shape != teachers_.front().spec().input_shape)
      throw ConstructionError("teachers disagree on input shape");
  }
  checksums_ = checksums();
}

std::vector<std::uint64_t> TeacherEnsemble::checksums() const {
  std::vector<std::uint64_t> out;
  for (const Model& t : teachers_) out.push_back(t.checksum());
  return out;
}

std::vector<Tensor> TeacherEnsemble::logits(const Tensor& x, std::vector<std::uint64_t>* seen) const {
  std::vector<Tensor> out;
  for (const Model& t : teachers_) {
    if (seen) seen->push_back(content_hash(x));
    out.push_back(predict_logits(t, x));
  }
  return out;
}

void DistillConfig::validate() const {
  if (!(adversarial_probability >= 0.0 && adversarial_probability <= 1.0))
    throw UsageError("adversarial probability must lie in [0,1]");
  if (mc_passes < 1) throw UsageError("MC passes must be >= 1");
  if (inner == InnerAttack::Fat && tau < 1) throw UsageError("FAT needs tau >= 1");
  if (batch_size == 0) throw UsageError("batch size must be positive");
  schedule.validate();
  attack.validate();
}

StepLog darht_train_step(Model& student, const TeacherEnsemble& teachers, const Tensor& x,
                         std::span<const std::size_t> labels, const DistillConfig& cfg, OptimState& optim, Rng& rng,
                         std::uint64_t step_seed) {
  check_ensemble_fit(student, teachers);
  const Tensor batch = student.as_batch(x);
  if (labels.size() != batch.dim(0)) throw DimensionError("one label per example required");

  StepLog log;
  std::vector<std::size_t> chosen;
  for (std::size_t b = 0; b < labels.size(); ++b)
    if (rng.bernoulli(cfg.adversarial_probability)) chosen.push_back(b);
  log.adversarial = chosen.size();

  Tensor x_step = batch;
  if (!chosen.empty()) {
    const Tensor x_sel = batch.gather_rows(chosen);
    std::vector<std::size_t> y_sel;
    for (std::size_t b : chosen) y_sel.push_back(labels[b]);
    AttackConfig attack = cfg.attack;
    attack.seed = derive_seed(step_seed, 1);
    const LogitFn f = logit_fn(student);
    const Tensor x_adv = cfg.inner == InnerAttack::Fat ? fat_generate(f, x_sel, y_sel, cfg.tau, attack).x_adv
                                                       : pgd(f, x_sel, y_sel, attack).x_adv;
    const std::size_t n = batch.size() / batch.dim(0);
    for (std::size_t i = 0; i < chosen.size(); ++i)
      std::copy_n(x_adv.data().begin() + static_cast<std::ptrdiff_t>(i * n), n,
                  x_step.data().begin() + static_cast<std::ptrdiff_t>(chosen[i] * n));
  }

  log.student_input_hash = content_hash(x_step);
  Tape tape;
  const auto params = student.bind(tape, true);
  const ForwardVars fv = student.mc_forward(tape, params, tape.constant(x_step), cfg.mc_passes,
                                            derive_seed(step_seed, 2));
  const auto teacher_logits = teachers.logits(x_step, &log.teacher_input_hashes);
  const LossTerms terms = total_loss(fv, teacher_logits, labels);
  log.total = terms.total.value().item();
  log.classification = terms.classification.value().item();
  log.distillation = terms.distillation.value().item();
  log.weights.assign(terms.weights.data().begin(), terms.weights.data().end());

  tape.backward(terms.total);
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const Var& p : params) grads.push_back(p.grad());
  sgd_step(student.parameters(), grads, optim);
  return log;
}

std::vector<DistillEpochLog> darht_train(Model& student, const TeacherEnsemble& teachers, const Dataset& data,
                                         const DistillConfig& cfg, const Dataset* monitor) {
  cfg.validate();
  if (data.size() == 0) throw UsageError("distillation needs data");
  data.validate();
  check_ensemble_fit(student, teachers);
  if (data.classes != student.classes()) throw UsageError("dataset K does not match the student");

  Dataset head;
  if (!monitor && cfg.log_examples > 0) {
    std::vector<std::size_t> idx(std::min(cfg.log_examples, data.size()));
    std::iota(idx.begin(), idx.end(), 0);
    head = data.subset(idx);
    monitor = &head;
  }

  std::vector<DistillEpochLog> out;
  OptimState optim(cfg.sgd);
  Rng order_rng(derive_seed(cfg.seed, 0));
  Rng coin_rng(derive_seed(cfg.seed, 1));
  const std::uint64_t step_base = derive_seed(cfg.seed, 2);
  const InferenceMode eval_mode{cfg.eval_mc_passes, derive_seed(cfg.seed, 3)};
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    DistillEpochLog row;
    row.epoch = epoch;
    row.lr = lr_at(cfg.schedule, epoch);
    row.weights.assign(teachers.size(), 0.0);
    optim.set_learning_rate(row.lr);
    order_rng.shuffle(order.begin(), order.end());
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const auto y = data.labels_at(idx);
      const StepLog s = darht_train_step(student, teachers, data.inputs.gather_rows(idx), y, cfg, optim, coin_rng,
                                         derive_seed(step_base, step));
      const double w = static_cast<double>(idx.size());
      row.classification += s.classification * w;
      row.distillation += s.distillation * w;
      for (std::size_t j = 0; j < s.weights.size(); ++j) row.weights[j] += s.weights[j] * w;
    }
    const double n = static_cast<double>(data.size());
    row.classification /= n;
    row.distillation /= n;
    for (double& w : row.weights) w /= n;
    if (monitor) {
      AttackConfig attack = cfg.attack;
      attack.seed = derive_seed(cfg.seed, 4 + epoch);
      const AttackEval e = evaluate_attack(student, *monitor, AttackKind::Pgd, attack, eval_mode);
      row.clean_acc = e.clean;
      row.pgd_acc = e.robust;
    }
    out.push_back(std::move(row));
  }
  return out;
}

void write_distill_csv(std::ostream& out, const std::vector<DistillEpochLog>& log) {
  const std::size_t j_count = log.empty() ? 0 : log.front().weights.size();
  out << "epoch,lr,loss_c,loss_k";
  for (std::size_t j = 0; j < j_count; ++j) out << ",w_" << j + 1;
  out << ",clean_acc,pgd_acc\n";
  char buf[64];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6f,%.6f", row.epoch, static_cast<double>(row.lr), row.classification,
                  row.distillation);
    out << buf;
    for (double w : row.weights) {
      std::snprintf(buf, sizeof buf, ",%.6f", w);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", row.clean_acc, row.pgd_acc);
    out << buf;
  }
}

}  // namespace darht
