#include "darht/attacks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "darht/errors.hpp"
#include "darht/ops.hpp"
#include "darht/rng.hpp"

namespace darht {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0f) || !std::isfinite(epsilon)) throw UsageError("attack epsilon must be a finite value >= 0");
  if (steps > 0 && !(step_size > 0.0f)) throw UsageError("attack step size must be positive");
  if (!(random_start >= 0.0f) || random_start > epsilon)
    throw UsageError("random start must lie in [0, epsilon]");
  if (!(kappa >= 0.0f)) throw UsageError("kappa must be >= 0");
}

namespace {

void check_inputs(const Tensor& x, std::span<const std::size_t> labels) {
  if (x.rank() < 2) throw DimensionError("attack input must be a batch, got " + shape_str(x.shape()));
  if (labels.size() != x.dim(0)) throw DimensionError("one label per example required");
  for (float v : x.data())
    if (!(v >= 0.0f && v <= 1.0f)) throw UsageError("attack input must lie in [0,1]");
}

void check_labels(std::span<const std::size_t> labels, std::size_t classes) {
  for (std::size_t y : labels)
    if (y >= classes) throw DimensionError("label " + std::to_string(y) + " out of range");
}

float sign(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

// Per-example L-infinity projection and [0,1] clipping, in place.
void project(Tensor& x_adv, const Tensor& x, float epsilon) {
  auto a = x_adv.data();
  auto c = x.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float v = std::clamp(a[i], c[i] - epsilon, c[i] + epsilon);
    a[i] = std::clamp(v, 0.0f, 1.0f);
  }
}

std::size_t row_len(const Tensor& x) { return x.size() / x.dim(0); }

Tensor random_start(const Tensor& x, const AttackConfig& cfg) {
  Tensor out = x;
  if (cfg.random_start <= 0.0f) return out;
  const std::size_t n = row_len(x);
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    Rng rng(derive_seed(cfg.seed, b));
    for (std::size_t i = 0; i < n; ++i) out.data()[b * n + i] += static_cast<float>(rng.uniform(-cfg.random_start, cfg.random_start));
  }
  project(out, x, cfg.epsilon);
  return out;
}

AttackResult empty_result(const Tensor& x) {
  const std::size_t b = x.dim(0);
  AttackResult r;
  r.x_adv = x;
  r.success.assign(b, 0);
  r.queries.assign(b, 0);
  r.iterations.assign(b, 0);
  r.final_loss.assign(b, 0.0);
  return r;
}

// Fills success and final loss from one evaluation of the final iterates.
void finalize(AttackResult& r, const LogitFn& model, std::span<const std::size_t> labels,
              const AttackObjective& objective) {
  Tape tape;
  const Var logits = model(tape, tape.constant(r.x_adv));
  const Tensor loss = attack_loss(logits, labels, objective).value();
  const auto pred = argmax_rows(logits.value());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    r.success[b] = pred[b] != labels[b];
    r.final_loss[b] = loss[b];
    ++r.queries[b];
  }
}

}  // namespace

ProbFn prob_fn(const Model& model, InferenceMode mode) {
  return [&model, mode](const Tensor& x) { return softmax(predict_logits(model, x, mode)); };
}

Var attack_loss(Var logits, std::span<const std::size_t> labels, const AttackObjective& objective) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw DimensionError("attack loss expects [B x K] logits");
  check_labels(labels, z.dim(1));
  switch (objective.kind) {
    case LossKind::CrossEntropy:
      return cross_entropy(logits, labels);
    case LossKind::CwMargin: {
      const std::size_t k = z.dim(1);
      if (k < 2) throw DimensionError("CW margin needs at least two classes");
      std::vector<std::size_t> other(z.dim(0));
      for (std::size_t b = 0; b < z.dim(0); ++b) {
        float best = -std::numeric_limits<float>::infinity();
        for (std::size_t c = 0; c < k; ++c)
          if (c != labels[b] && z.at(b, c) > best) {
            best = z.at(b, c);
            other[b] = c;
          }
      }
      const Var margin = sub(pick(logits, labels), pick(logits, other));
      return scale(maximum(margin, -objective.kappa), -1.0f);
    }
    case LossKind::KlDivergence: {
      if (objective.reference_logits.shape() != z.shape())
        throw DimensionError("KL objective needs reference logits shaped like the logits");
      Tape& tape = logits.tape();
      const Var log_p = log_softmax(logits);
      const Var log_q = tape.constant(log_softmax(objective.reference_logits));
      return row_sum(mul(softmax(logits), sub(log_p, log_q)));
    }
  }
  throw UsageError("unknown loss kind");
}

InputGradient input_gradient(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                             const AttackObjective& objective) {
  Tape tape;
  const Var xv = tape.variable(x);
  const Var logits = model(tape, xv);
  const Var loss = attack_loss(logits, labels, objective);
  InputGradient out;
  out.logits = logits.value();
  out.loss.assign(loss.value().data().begin(), loss.value().data().end());
  tape.backward(sum(loss));
  out.grad = xv.grad();
  return out;
}

AttackResult fgsm(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels, float epsilon) {
  check_inputs(x, labels);
  if (!(epsilon >= 0.0f)) throw UsageError("attack epsilon must be >= 0");
  const AttackObjective objective;
  AttackResult r = empty_result(x);
  const InputGradient g = input_gradient(model, x, labels, objective);
  auto a = r.x_adv.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i] + epsilon * sign(g.grad[i]), 0.0f, 1.0f);
  for (auto& q : r.queries) q = 1;
  for (auto& it : r.iterations) it = 1;
  finalize(r, model, labels, objective);
  return r;
}

AttackResult pgd_objective(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                           const AttackConfig& cfg, const AttackObjective& objective,
                           std::optional<std::size_t> early_stop_tau) {
  cfg.validate();
  check_inputs(x, labels);
  if (early_stop_tau && *early_stop_tau == 0) throw UsageError("tau must be >= 1");
  const std::size_t batch = x.dim(0), n = row_len(x);
  AttackResult r = empty_result(x);
  r.x_adv = random_start(x, cfg);

  std::vector<std::uint8_t> active(batch, 1);
  std::vector<std::size_t> budget(batch, early_stop_tau.value_or(0));
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const InputGradient g = input_gradient(model, r.x_adv, labels, objective);
    bool any = false;
    for (std::size_t b = 0; b < batch; ++b) {
      if (!active[b]) continue;
      ++r.queries[b];
      if (early_stop_tau && argmax_rows(g.logits.rows(b, b + 1))[0] != labels[b]) {
        if (budget[b] == 0) {
          active[b] = 0;
          continue;
        }
        --budget[b];
      }
      any = true;
      for (std::size_t i = b * n; i < (b + 1) * n; ++i) r.x_adv.data()[i] += cfg.step_size * sign(g.grad[i]);
      ++r.iterations[b];
    }
    project(r.x_adv, x, cfg.epsilon);
    if (!any) break;
  }
  finalize(r, model, labels, objective);
  return r;
}

AttackResult pgd(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                 const AttackConfig& cfg) {
  return pgd_objective(model, x, labels, cfg, AttackObjective{cfg.loss, cfg.kappa, {}});
}

AttackResult cw_linf(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                     const AttackConfig& cfg) {
  return pgd_objective(model, x, labels, cfg, AttackObjective{LossKind::CwMargin, cfg.kappa, {}});
}

AttackResult apgd(const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                  const AttackConfig& cfg) {
  cfg.validate();
  check_inputs(x, labels);
  if (cfg.steps < 2) throw UsageError("apgd needs at least two steps");
  const AttackObjective objective{cfg.loss, cfg.kappa, {}};
  const std::size_t batch = x.dim(0), n = row_len(x);
  constexpr float kMomentum = 0.75f;
  constexpr std::array<double, 4> kCheckpoints{0.22, 0.44, 0.66, 0.88};

  std::vector<std::size_t> checkpoints;
  for (double p : kCheckpoints) {
    const auto w = static_cast<std::size_t>(std::ceil(p * static_cast<double>(cfg.steps)));
    if (w > 0 && (checkpoints.empty() || w > checkpoints.back())) checkpoints.push_back(w);
  }

  AttackResult r = empty_result(x);
  r.loss_history.assign(batch, {});
  Tensor cur = random_start(x, cfg);
  Tensor prev = cur;
  InputGradient g = input_gradient(model, cur, labels, objective);
  std::vector<float> eta(batch, 2.0f * cfg.epsilon);
  std::vector<double> best_loss = g.loss, prev_loss = g.loss;
  Tensor best = cur;
  std::vector<std::size_t> improved(batch, 0);
  std::size_t last_checkpoint = 0, next = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    r.loss_history[b].push_back(g.loss[b]);
    r.queries[b] = 1;
  }

  for (std::size_t k = 0; k < cfg.steps; ++k) {
    Tensor z = cur;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = b * n; i < (b + 1) * n; ++i) z.data()[i] += eta[b] * sign(g.grad[i]);
    project(z, x, cfg.epsilon);
    Tensor step = z;
    if (k > 0) {
      for (std::size_t i = 0; i < step.size(); ++i)
        step[i] = cur[i] + kMomentum * (z[i] - cur[i]) + (1.0f - kMomentum) * (cur[i] - prev[i]);
      project(step, x, cfg.epsilon);
    }
    prev = std::move(cur);
    cur = std::move(step);
    g = input_gradient(model, cur, labels, objective);
    for (std::size_t b = 0; b < batch; ++b) {
      ++r.queries[b];
      ++r.iterations[b];
      r.loss_history[b].push_back(g.loss[b]);
      if (g.loss[b] > prev_loss[b]) ++improved[b];
      prev_loss[b] = g.loss[b];
      if (g.loss[b] > best_loss[b]) {
        best_loss[b] = g.loss[b];
        std::copy_n(cur.data().begin() + static_cast<std::ptrdiff_t>(b * n), n,
                    best.data().begin() + static_cast<std::ptrdiff_t>(b * n));
      }
    }
    if (next < checkpoints.size() && k + 1 == checkpoints[next]) {
      const double window = static_cast<double>(checkpoints[next] - last_checkpoint);
      for (std::size_t b = 0; b < batch; ++b) {
        if (static_cast<double>(improved[b]) < 0.75 * window) {
          // Halve and restart from the best point seen so far.
          eta[b] *= 0.5f;
          std::copy_n(best.data().begin() + static_cast<std::ptrdiff_t>(b * n), n,
                      cur.data().begin() + static_cast<std::ptrdiff_t>(b * n));
          std::copy_n(best.data().begin() + static_cast<std::ptrdiff_t>(b * n), n,
                      prev.data().begin() + static_cast<std::ptrdiff_t>(b * n));
        }
        improved[b] = 0;
      }
      last_checkpoint = checkpoints[next++];
      g = input_gradient(model, cur, labels, objective);
      for (std::size_t b = 0; b < batch; ++b) prev_loss[b] = g.loss[b];
    }
  }
  r.x_adv = std::move(best);
  finalize(r, model, labels, objective);
  return r;
}

namespace {

// Image geometry used to place square patches: rank-1 rows act as 1 x 1 x D.
struct Geometry {
  std::size_t c = 1, h = 1, w = 1;
};

Geometry geometry(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() == 2) return {1, 1, s[1]};
  if (s.size() == 3) return {1, s[1], s[2]};
  if (s.size() == 4) return {s[1], s[2], s[3]};
  throw DimensionError("square attack supports inputs of rank 1 to 3");
}

double patch_fraction(std::size_t used, std::size_t budget) {
  const double f = static_cast<double>(used) / static_cast<double>(budget);
  double p = 0.8;
  for (double cut : {0.1, 0.25, 0.5, 0.75})
    if (f > cut) p *= 0.5;
  return p;
}

// Margin log p_y - max_{k != y} log p_k; negative means misclassified.
double margin(const Tensor& probs, std::size_t row, std::size_t y) {
  constexpr double kFloor = 1e-30;
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < probs.dim(1); ++k)
    if (k != y) other = std::max(other, std::log(std::max<double>(probs.at(row, k), kFloor)));
  return std::log(std::max<double>(probs.at(row, y), kFloor)) - other;
}

}  // namespace

AttackResult square_attack(const ProbFn& model, const Tensor& x, std::span<const std::size_t> labels,
                           const AttackConfig& cfg) {
  cfg.validate();
  check_inputs(x, labels);
  const Geometry geo = geometry(x);
  const std::size_t batch = x.dim(0), n = row_len(x);
  AttackResult r = empty_result(x);
  if (cfg.query_budget == 0) return r;

  std::vector<Rng> rngs;
  for (std::size_t b = 0; b < batch; ++b) rngs.emplace_back(derive_seed(cfg.seed, b));
  const float eps = cfg.epsilon;

  // Vertical stripes: one random sign per (channel, column).
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < geo.c; ++c)
      for (std::size_t col = 0; col < geo.w; ++col) {
        const float s = rngs[b].bernoulli(0.5) ? eps : -eps;
        for (std::size_t row = 0; row < geo.h; ++row) {
          const std::size_t i = b * n + (c * geo.h + row) * geo.w + col;
          r.x_adv[i] = std::clamp(x[i] + s, 0.0f, 1.0f);
        }
      }
  Tensor probs = model(r.x_adv);
  std::vector<double> best(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    best[b] = margin(probs, b, labels[b]);
    r.queries[b] = 1;
  }

  std::vector<std::size_t> open;
  for (;;) {
    open.clear();
    for (std::size_t b = 0; b < batch; ++b)
      if (best[b] >= 0.0 && r.queries[b] < cfg.query_budget) open.push_back(b);
    if (open.empty()) break;

    Tensor candidates = r.x_adv.gather_rows(open);
    for (std::size_t o = 0; o < open.size(); ++o) {
      const std::size_t b = open[o];
      Rng& rng = rngs[b];
      const double p = patch_fraction(r.queries[b], cfg.query_budget);
      std::size_t sh = 1, sw = 1;
      if (geo.h == 1) {
        sw = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(p * static_cast<double>(geo.w))), 1, geo.w);
      } else {
        const auto side = static_cast<std::size_t>(std::lround(std::sqrt(p * static_cast<double>(geo.h * geo.w))));
        sh = sw = std::clamp<std::size_t>(side, 1, std::min(geo.h, geo.w));
      }
      const std::size_t top = rng.below(geo.h - sh + 1), left = rng.below(geo.w - sw + 1);
      float* cand = candidates.data().data() + o * n;
      const float* orig = x.data().data() + b * n;
      // Resample signs a few times when the patch would not change anything.
      for (int attempt = 0; attempt < 10; ++attempt) {
        bool changed = false;
        for (std::size_t c = 0; c < geo.c; ++c) {
          const float s = rng.bernoulli(0.5) ? eps : -eps;
          for (std::size_t row = top; row < top + sh; ++row)
            for (std::size_t col = left; col < left + sw; ++col) {
              const std::size_t i = (c * geo.h + row) * geo.w + col;
              const float v = std::clamp(orig[i] + s, 0.0f, 1.0f);
              changed = changed || v != cand[i];
              cand[i] = v;
            }
        }
        if (changed) break;
      }
    }
    probs = model(candidates);
    for (std::size_t o = 0; o < open.size(); ++o) {
      const std::size_t b = open[o];
      ++r.queries[b];
      ++r.iterations[b];
      const double m = margin(probs, o, labels[b]);
      if (m < best[b]) {
        best[b] = m;
        std::copy_n(candidates.data().begin() + static_cast<std::ptrdiff_t>(o * n), n,
                    r.x_adv.data().begin() + static_cast<std::ptrdiff_t>(b * n));
      }
    }
  }
  for (std::size_t b = 0; b < batch; ++b) {
    r.success[b] = best[b] < 0.0;
    r.final_loss[b] = -best[b];
  }
  return r;
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::Identity: return "none";
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Pgd: return "pgd";
    case AttackKind::CwInf: return "cw";
    case AttackKind::Apgd: return "apgd";
    case AttackKind::Square: return "square";
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& name) {
  for (auto k : {AttackKind::Identity, AttackKind::Fgsm, AttackKind::Pgd, AttackKind::CwInf, AttackKind::Apgd,
                 AttackKind::Square})
    if (to_string(k) == name) return k;
  throw UsageError("unknown attack '" + name + "'");
}

AttackResult run_attack(AttackKind kind, const LogitFn& model, const Tensor& x, std::span<const std::size_t> labels,
                        const AttackConfig& cfg) {
  switch (kind) {
    case AttackKind::Identity: {
      check_inputs(x, labels);
      AttackResult r = empty_result(x);
      finalize(r, model, labels, AttackObjective{});
      return r;
    }
    case AttackKind::Fgsm: return fgsm(model, x, labels, cfg.epsilon);
    case AttackKind::Pgd: return pgd(model, x, labels, cfg);
    case AttackKind::CwInf: return cw_linf(model, x, labels, cfg);
    case AttackKind::Apgd: return apgd(model, x, labels, cfg);
    case AttackKind::Square: {
      const ProbFn probs = [&model](const Tensor& batch) {
        Tape tape;
        return softmax(model(tape, tape.constant(batch)).value());
      };
      return square_attack(probs, x, labels, cfg);
    }
  }
  throw UsageError("unknown attack");
}

}  // namespace darht
