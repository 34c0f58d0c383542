#include "darht/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "darht/errors.hpp"
#include "darht/rng.hpp"

namespace darht {

AttackEval evaluate_attack(const Model& model, const Dataset& data, AttackKind attack, const AttackConfig& cfg,
                           InferenceMode mode, std::size_t batch_size) {
  if (data.size() == 0) throw UsageError("evaluation needs a non-empty dataset");
  if (batch_size == 0) throw UsageError("batch size must be positive");
  const LogitFn f = logit_fn(model, mode);
  AttackEval out;
  out.x_adv = Tensor(data.inputs.shape());
  const std::size_t n = data.inputs.size() / data.size();
  std::size_t clean_ok = 0, robust_ok = 0;
  for (std::size_t begin = 0, chunk = 0; begin < data.size(); begin += batch_size, ++chunk) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    const Tensor x = data.inputs.rows(begin, end);
    const std::span<const std::size_t> y(data.labels.data() + begin, end - begin);
    AttackConfig chunk_cfg = cfg;
    chunk_cfg.seed = derive_seed(cfg.seed, chunk);
    const auto clean = predict(model, x, mode);
    const AttackResult r = run_attack(attack, f, x, y, chunk_cfg);
    const auto adv = attack == AttackKind::Identity ? clean : predict(model, r.x_adv, mode);
    std::copy(r.x_adv.data().begin(), r.x_adv.data().end(),
              out.x_adv.data().begin() + static_cast<std::ptrdiff_t>(begin * n));
    for (std::size_t i = 0; i < y.size(); ++i) {
      const bool c = clean[i] == y[i], a = adv[i] == y[i];
      out.clean_correct.push_back(c);
      out.adv_correct.push_back(a);
      clean_ok += c;
      robust_ok += c && a;
    }
  }
  out.clean = static_cast<double>(clean_ok) / static_cast<double>(data.size());
  out.robust = static_cast<double>(robust_ok) / static_cast<double>(data.size());
  return out;
}

double robust_accuracy(const Model& model, const Dataset& data, AttackKind attack, const AttackConfig& cfg,
                       InferenceMode mode) {
  return evaluate_attack(model, data, attack, cfg, mode).robust;
}

double clean_accuracy(const Model& model, const Dataset& data, InferenceMode mode) {
  return evaluate_attack(model, data, AttackKind::Identity, AttackConfig{}, mode).clean;
}

double w_robust(double clean, double robust) {
  if (!(clean >= 0.0 && clean <= 1.0) || !(robust >= 0.0 && robust <= 1.0))
    throw UsageError("accuracies must lie in [0,1]");
  return (clean + robust) / 2.0;
}

ContingencyTable contingency(std::span<const std::size_t> student_pred, std::span<const std::size_t> teacher_pred,
                             std::span<const std::size_t> labels) {
  if (student_pred.size() != labels.size() || teacher_pred.size() != labels.size())
    throw UsageError("contingency inputs differ in length");
  ContingencyTable t;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool s = student_pred[i] == labels[i], c = teacher_pred[i] == labels[i];
    if (s && c) ++t.both_correct;
    else if (s) ++t.student_correct_teacher_wrong;
    else if (c) ++t.student_wrong_teacher_correct;
    else ++t.both_wrong;
  }
  return t;
}

ContingencyTable contingency(const Model& student, InferenceMode student_mode, const Model& teacher,
                             const Tensor& adv_examples, std::span<const std::size_t> labels) {
  if (adv_examples.rank() < 2 || adv_examples.dim(0) != labels.size())
    throw UsageError("one label per adversarial example required");
  return contingency(predict(student, adv_examples, student_mode), predict(teacher, adv_examples), labels);
}

TransferRates transferability_rate(std::span<const ContingencyTable> tables) {
  if (tables.empty()) throw UsageError("transferability needs at least one teacher");
  TransferRates out;
  for (const auto& t : tables) {
    if (t.student_wrong() == 0) throw UndefinedRateError("no adversarial example fooled the student");
    out.per_teacher.push_back(static_cast<double>(t.both_wrong) / static_cast<double>(t.student_wrong()));
  }
  out.mean = std::accumulate(out.per_teacher.begin(), out.per_teacher.end(), 0.0) /
             static_cast<double>(out.per_teacher.size());
  return out;
}

double recovery_rate(const ContingencyTable& table) {
  if (table.teacher_wrong() == 0) throw UndefinedRateError("the teacher misclassified no example");
  return static_cast<double>(table.student_correct_teacher_wrong) / static_cast<double>(table.teacher_wrong());
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Number of size-k subsets of `ranks` reaching each sum.
std::vector<double> subset_sum_counts(const std::vector<long>& ranks, std::size_t k) {
  const long top = *std::max_element(ranks.begin(), ranks.end());
  const auto width = static_cast<std::size_t>(top) * k + 1;  // no k-subset sums higher
  std::vector<std::vector<double>> dp(k + 1, std::vector<double>(width, 0.0));
  dp[0][0] = 1.0;
  long reach = 0;
  for (long r : ranks) {
    reach += r;
    for (std::size_t j = k; j >= 1; --j) {
      const long hi = std::min(reach, top * static_cast<long>(j));
      for (long s = hi; s >= r; --s)
        dp[j][static_cast<std::size_t>(s)] += dp[j - 1][static_cast<std::size_t>(s - r)];
    }
  }
  return dp[k];
}

}  // namespace

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw UsageError("Mann-Whitney needs two non-empty samples");
  const std::size_t n = a.size(), m = b.size(), total = n + m;
  std::vector<std::pair<double, bool>> pooled;  // value, from a
  pooled.reserve(total);
  for (double v : a) pooled.emplace_back(v, true);
  for (double v : b) pooled.emplace_back(v, false);
  for (const auto& [v, from_a] : pooled)
    if (std::isnan(v)) throw UsageError("Mann-Whitney samples must not contain NaN");
  std::sort(pooled.begin(), pooled.end(), [](const auto& x, const auto& y) { return x.first < y.first; });

  // Doubled midranks keep everything in integers.
  std::vector<long> rank2(total);
  long sum2_a = 0;
  double tie_term = 0.0;
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j + 1 < total && pooled[j + 1].first == pooled[i].first) ++j;
    const long r2 = static_cast<long>(i + j + 2);
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    for (std::size_t q = i; q <= j; ++q) {
      rank2[q] = r2;
      if (pooled[q].second) sum2_a += r2;
    }
    i = j + 1;
  }
  const long n_l = static_cast<long>(n);
  const long u2 = sum2_a - n_l * (n_l + 1);  // doubled U of a

  MannWhitneyResult out;
  out.u = static_cast<double>(u2) / 2.0;
  if (n <= 8 || m <= 8) {
    out.exact = true;
    // Enumerate the smaller sample's rank sums; U_a is monotone in either.
    const bool over_a = n <= m;
    const std::size_t k = over_a ? n : m;
    const auto counts = subset_sum_counts(rank2, k);
    const long observed = over_a ? sum2_a : std::accumulate(rank2.begin(), rank2.end(), 0L) - sum2_a;
    double all = 0.0, tail = 0.0, point = 0.0;
    for (std::size_t s = 0; s < counts.size(); ++s) {
      if (counts[s] == 0.0) continue;
      all += counts[s];
      const long s_l = static_cast<long>(s);
      if (over_a ? s_l <= observed : s_l >= observed) tail += counts[s];
      if (s_l == observed) point += counts[s];
    }
    out.p = tail / all;
    out.p_point = point / all;
    return out;
  }

  const double nm = static_cast<double>(n) * static_cast<double>(m);
  const double nn = static_cast<double>(total);
  const double mean = nm / 2.0;
  const double var = nm / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (var <= 0.0) {
    out.p = 1.0;
    out.p_point = 1.0;
    return out;
  }
  const double sd = std::sqrt(var);
  out.p = normal_cdf((out.u + 0.5 - mean) / sd);
  out.p_point = out.p - normal_cdf((out.u - 0.5 - mean) / sd);
  return out;
}

void MetricsReport::add_attack(const std::string& name, double clean_acc, double robust_acc) {
  attacks.push_back({name, clean_acc, robust_acc, w_robust(clean_acc, robust_acc)});
}

void MetricsReport::validate() const {
  auto rate = [](double v, const std::string& what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(what + " outside [0,1]");
  };
  rate(clean, "clean accuracy");
  for (const auto& a : attacks) {
    rate(a.clean, a.attack + " clean");
    rate(a.robust, a.attack + " robust");
    if (a.w_robust != (a.clean + a.robust) / 2.0) throw ValidationError(a.attack + " W-Robust is inconsistent");
  }
  for (double t : transferability) rate(t, "transferability");
  if (ensemble_transferability) rate(*ensemble_transferability, "ensemble transferability");
  for (double r : recovery) rate(r, "recovery rate");
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["clean"] = clean;
  j["attacks"] = nlohmann::json::array();
  for (const auto& a : attacks)
    j["attacks"].push_back({{"attack", a.attack}, {"clean", a.clean}, {"robust", a.robust}, {"w_robust", a.w_robust}});
  j["transferability"] = transferability;
  if (ensemble_transferability) j["ensemble_transferability"] = *ensemble_transferability;
  j["recovery"] = recovery;
  return j;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

void write_metrics_csv(std::ostream& out, const MetricsReport& report) {
  out << "attack,clean,robust,w_robust\n";
  for (const auto& a : report.attacks)
    out << a.attack << ',' << percent(a.clean) << ',' << percent(a.robust) << ',' << percent(a.w_robust) << '\n';
}

}  // namespace darht
