#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "darht/attacks.hpp"
#include "darht/data.hpp"
#include "darht/model.hpp"

namespace darht {

// Per-example outcome of attacking a dataset. An example is robust when it
// is classified correctly both before and after the attack, so robust
// accuracy never exceeds clean accuracy.
struct AttackEval {
  double clean = 0.0;
  double robust = 0.0;
  std::vector<std::uint8_t> clean_correct;
  std::vector<std::uint8_t> adv_correct;
  Tensor x_adv;
};

AttackEval evaluate_attack(const Model& model, const Dataset& data, AttackKind attack, const AttackConfig& cfg,
                           InferenceMode mode = {}, std::size_t batch_size = 256);

double robust_accuracy(const Model& model, const Dataset& data, AttackKind attack, const AttackConfig& cfg,
                       InferenceMode mode = {});
double clean_accuracy(const Model& model, const Dataset& data, InferenceMode mode = {});

// (clean + robust) / 2 on fractions in [0,1].
double w_robust(double clean, double robust);

// Student x teacher correctness on the same adversarial inputs.
struct ContingencyTable {
  std::size_t both_correct = 0;
  std::size_t student_correct_teacher_wrong = 0;
  std::size_t student_wrong_teacher_correct = 0;
  std::size_t both_wrong = 0;

  std::size_t total() const {
    return both_correct + student_correct_teacher_wrong + student_wrong_teacher_correct + both_wrong;
  }
  std::size_t student_wrong() const { return student_wrong_teacher_correct + both_wrong; }
  std::size_t teacher_wrong() const { return student_correct_teacher_wrong + both_wrong; }
};

ContingencyTable contingency(std::span<const std::size_t> student_pred, std::span<const std::size_t> teacher_pred,
                             std::span<const std::size_t> labels);
ContingencyTable contingency(const Model& student, InferenceMode student_mode, const Model& teacher,
                             const Tensor& adv_examples, std::span<const std::size_t> labels);

struct TransferRates {
  std::vector<double> per_teacher;
  double mean = 0.0;
};

// Per teacher: both wrong / student wrong; the ensemble value is the mean.
TransferRates transferability_rate(std::span<const ContingencyTable> tables);

// Student correct and teacher wrong / teacher wrong.
double recovery_rate(const ContingencyTable& table);

struct MannWhitneyResult {
  double u = 0.0;       // U of sample a: #(a > b) + ties / 2
  double p = 0.0;       // one-sided P(U <= u) under H0, i.e. alternative "a tends lower"
  double p_point = 0.0; // probability mass the test assigns to the observed u
  bool exact = false;
};

// Exact null distribution (midranks, ties included) unless both samples
// exceed 8; otherwise the normal approximation with tie-corrected variance
// and a +0.5 continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

struct AttackMetrics {
  std::string attack;
  double clean = 0.0;
  double robust = 0.0;
  double w_robust = 0.0;
};

struct MetricsReport {
  double clean = 0.0;
  std::vector<AttackMetrics> attacks;
  std::vector<double> transferability;  // per teacher
  std::optional<double> ensemble_transferability;
  std::vector<double> recovery;  // per teacher

  void add_attack(const std::string& name, double clean_acc, double robust_acc);
  // Throws ValidationError on rates outside [0,1] or inconsistent W-Robust.
  void validate() const;
  nlohmann::json to_json() const;
};

// One row per attack with header attack,clean,robust,w_robust; percentages
// at 2 decimals.
void write_metrics_csv(std::ostream& out, const MetricsReport& report);
std::string percent(double fraction);

}  // namespace darht
