#include <gtest/gtest.h>

#include <cmath>

#include "darht/attacks.hpp"
#include "darht/errors.hpp"
#include "darht/ops.hpp"
#include "darht/rng.hpp"

using namespace darht;

namespace {

// z = [x, 0] for a 1-D input.
LogitFn binary_toy() {
  return [](Tape& tape, Var x) { return matmul(x, tape.constant(Tensor({1, 2}, {1.0f, 0.0f}))); };
}

// z = [0, -a * |x - c|^2]; the class-0 CE is increasing in -|x - c|^2, so the
// attack objective peaks at the interior point c.
LogitFn quadratic_toy(Tensor centre, float a) {
  return [centre = std::move(centre), a](Tape& tape, Var x) {
    const Var d = sub(x, tape.constant(centre));
    const Var q = scale(row_sum(square(d)), -a);
    const Var col = reshape(q, {x.shape()[0], 1});
    return matmul(col, tape.constant(Tensor({1, 2}, {0.0f, 1.0f})));
  };
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

void expect_in_ball(const AttackResult& r, const Tensor& x, float eps) {
  EXPECT_LE(max_abs_diff(r.x_adv, x), eps + 1e-6);
  for (float v : r.x_adv.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

Tensor random_batch(Rng& rng, Shape shape) {
  Tensor t(shape);
  for (auto& v : t.data()) {
    // Include exact range edges so clipping is exercised.
    const double u = rng.uniform();
    v = u < 0.1 ? 0.0f : (u > 0.9 ? 1.0f : static_cast<float>(rng.uniform()));
  }
  return t;
}

std::vector<std::size_t> random_labels(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng.below(k);
  return y;
}

}  // namespace

TEST(Fgsm, ZeroBudgetIsIdentity) {
  const Tensor x({1, 1}, {0.5f});
  const std::vector<std::size_t> y{0};
  EXPECT_TRUE(fgsm(binary_toy(), x, y, 0.0f).x_adv.identical(x));
}

TEST(Fgsm, BinaryToyStepsDown) {
  const Tensor x({1, 1}, {0.5f});
  const std::vector<std::size_t> y{0};
  const auto r = fgsm(binary_toy(), x, y, 0.1f);
  EXPECT_FLOAT_EQ(r.x_adv[0], 0.4f);
  EXPECT_NEAR(r.final_loss[0], std::log1p(std::exp(-0.4)), 1e-6);
}

TEST(Fgsm, FullBudgetOnNonzeroGradient) {
  const Tensor x({3, 1}, {0.5f, 0.3f, 0.7f});
  const std::vector<std::size_t> y{0, 1, 0};
  const auto r = fgsm(binary_toy(), x, y, 0.1f);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(std::abs(r.x_adv[i] - x[i]), 0.1f, 1e-6);
}

TEST(Fgsm, ZeroGradientCoordinatesUnchanged) {
  // Second input coordinate does not reach the logits.
  const LogitFn f = [](Tape& tape, Var x) {
    return matmul(x, tape.constant(Tensor({2, 2}, {1.0f, 0.0f, 0.0f, 0.0f})));
  };
  const Tensor x({1, 2}, {0.5f, 0.25f});
  const std::vector<std::size_t> y{0};
  const auto r = fgsm(f, x, y, 0.1f);
  EXPECT_FLOAT_EQ(r.x_adv[0], 0.4f);
  EXPECT_EQ(r.x_adv[1], 0.25f);
}

TEST(Pgd, SingleStepEqualsFgsmBitwise) {
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Model m = Model::build(cnn_small({1, 8, 8}, 4), seed);
    const Tensor x = random_batch(rng, {6, 1, 8, 8});
    const auto y = random_labels(rng, 6, 4);
    AttackConfig cfg;
    cfg.epsilon = 8.0f / 255.0f;
    cfg.step_size = cfg.epsilon;
    cfg.steps = 1;
    cfg.random_start = 0.0f;
    cfg.seed = seed;
    const auto a = fgsm(logit_fn(m), x, y, cfg.epsilon);
    const auto b = pgd(logit_fn(m), x, y, cfg);
    EXPECT_TRUE(a.x_adv.identical(b.x_adv)) << "seed " << seed;
  }
}

TEST(Pgd, DefaultBudgetStaysInBall) {
  Rng rng(4);
  Model m = Model::build(mlp_deep({10}, 3), 1);
  const Tensor x = random_batch(rng, {32, 10});
  const auto y = random_labels(rng, 32, 3);
  const AttackConfig cfg;  // 8/255, step 2/255, 10 steps, start 0.001
  const auto r = pgd(logit_fn(m), x, y, cfg);
  expect_in_ball(r, x, cfg.epsilon);
  for (std::size_t b = 0; b < 32; ++b) EXPECT_EQ(r.iterations[b], 10u);
}

TEST(Pgd, AtLeastAsStrongAsFgsmOnToy) {
  for (float x0 : {0.2f, 0.5f, 0.8f}) {
    const Tensor x({1, 1}, {x0});
    const std::vector<std::size_t> y{0};
    AttackConfig cfg;
    cfg.epsilon = 0.1f;
    cfg.step_size = 0.02f;
    cfg.random_start = 0.0f;
    const auto p = pgd(binary_toy(), x, y, cfg);
    const auto f = fgsm(binary_toy(), x, y, cfg.epsilon);
    EXPECT_GE(p.final_loss[0], f.final_loss[0] - 1e-7);
  }
}

TEST(Pgd, ZeroStepsReturnsStart) {
  const Tensor x({1, 1}, {0.5f});
  const std::vector<std::size_t> y{0};
  AttackConfig cfg;
  cfg.steps = 0;
  cfg.random_start = 0.0f;
  EXPECT_TRUE(pgd(binary_toy(), x, y, cfg).x_adv.identical(x));
}

TEST(AttackConfigTest, RejectsInvalid) {
  AttackConfig cfg;
  cfg.epsilon = -0.1f;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = {};
  cfg.step_size = 0.0f;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg.steps = 0;
  EXPECT_NO_THROW(cfg.validate());
  cfg = {};
  cfg.random_start = cfg.epsilon * 2.0f;
  EXPECT_THROW(cfg.validate(), UsageError);
}

TEST(AttackInputs, RejectOutOfRangeAndBadLabels) {
  const std::vector<std::size_t> y{0};
  EXPECT_THROW(pgd(binary_toy(), Tensor({1, 1}, {1.5f}), y, {}), UsageError);
  const std::vector<std::size_t> bad{2};
  EXPECT_THROW(pgd(binary_toy(), Tensor({1, 1}, {0.5f}), bad, {}), DimensionError);
  const std::vector<std::size_t> two{0, 1};
  EXPECT_THROW(pgd(binary_toy(), Tensor({1, 1}, {0.5f}), two, {}), DimensionError);
}

TEST(CwLinf, ZeroBudgetIsIdentity) {
  const Tensor x({1, 1}, {0.5f});
  const std::vector<std::size_t> y{0};
  AttackConfig cfg;
  cfg.epsilon = 0.0f;
  cfg.random_start = 0.0f;
  EXPECT_TRUE(cw_linf(binary_toy(), x, y, cfg).x_adv.identical(x));
}

TEST(CwLinf, MarginLossValue) {
  Tape tape;
  const Var z = tape.constant(Tensor({1, 2}, {3.0f, 0.0f}));
  const std::vector<std::size_t> y{0};
  const auto loss = attack_loss(z, y, AttackObjective{LossKind::CwMargin, 0.0f, {}});
  EXPECT_FLOAT_EQ(loss.value()[0], -3.0f);
  // Confidence caps the loss at kappa once the margin is negative enough.
  const Var w = tape.constant(Tensor({1, 2}, {0.0f, 5.0f}));
  EXPECT_FLOAT_EQ(attack_loss(w, y, AttackObjective{LossKind::CwMargin, 2.0f, {}}).value()[0], 2.0f);
}

TEST(CwLinf, StaysInBall) {
  Rng rng(5);
  Model m = Model::build(mlp_wide({6}, 4), 2);
  const Tensor x = random_batch(rng, {16, 6});
  const auto y = random_labels(rng, 16, 4);
  AttackConfig cfg;
  cfg.epsilon = 0.05f;
  cfg.step_size = 0.01f;
  expect_in_ball(cw_linf(logit_fn(m), x, y, cfg), x, cfg.epsilon);
}

TEST(Apgd, ZeroBudgetIsIdentity) {
  const Tensor x({1, 1}, {0.5f});
  const std::vector<std::size_t> y{0};
  AttackConfig cfg;
  cfg.epsilon = 0.0f;
  cfg.random_start = 0.0f;
  EXPECT_TRUE(apgd(binary_toy(), x, y, cfg).x_adv.identical(x));
}

TEST(Apgd, RequiresTwoSteps) {
  const Tensor x({1, 1}, {0.5f});
  const std::vector<std::size_t> y{0};
  AttackConfig cfg;
  cfg.steps = 1;
  EXPECT_THROW(apgd(binary_toy(), x, y, cfg), UsageError);
}

TEST(Apgd, ReturnsBestIterate) {
  Rng rng(6);
  Model m = Model::build(mlp_deep({5}, 3), 4);
  const Tensor x = random_batch(rng, {12, 5});
  const auto y = random_labels(rng, 12, 3);
  AttackConfig cfg;
  cfg.epsilon = 0.1f;
  cfg.steps = 25;
  const auto r = apgd(logit_fn(m), x, y, cfg);
  expect_in_ball(r, x, cfg.epsilon);
  for (std::size_t b = 0; b < 12; ++b) {
    ASSERT_EQ(r.loss_history[b].size(), cfg.steps + 1);
    for (double l : r.loss_history[b]) EXPECT_GE(r.final_loss[b], l - 1e-6);
  }
}

TEST(Apgd, NoWorseThanPgdOnQuadraticToy) {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(77, seed));
    Tensor x({1, 2}), c({1, 2});
    for (std::size_t i = 0; i < 2; ++i) {
      x[i] = static_cast<float>(rng.uniform(0.3, 0.7));
      c[i] = x[i] + static_cast<float>(rng.uniform(-0.08, 0.08));
    }
    const LogitFn f = quadratic_toy(c, 50.0f);
    const std::vector<std::size_t> y{0};
    AttackConfig cfg;
    cfg.epsilon = 0.1f;
    cfg.step_size = 0.03f;
    cfg.steps = 20;
    cfg.seed = seed;
    const auto a = apgd(f, x, y, cfg);
    const auto p = pgd(f, x, y, cfg);
    EXPECT_GE(a.final_loss[0], p.final_loss[0] - 1e-7) << "seed " << seed;
    wins += a.final_loss[0] >= p.final_loss[0] - 1e-7;
  }
  EXPECT_EQ(wins, 20);
}

TEST(Square, ZeroBudgetIsIdentity) {
  Model m = Model::build(mlp_wide({2}, 2), 1);
  const Tensor x({1, 2}, {0.5f, 0.5f});
  const std::vector<std::size_t> y{0};
  AttackConfig cfg;
  cfg.query_budget = 0;
  const auto r = square_attack(prob_fn(m), x, y, cfg);
  EXPECT_TRUE(r.x_adv.identical(x));
  EXPECT_FALSE(r.success[0]);
}

TEST(Square, RespectsBudgetAndBall) {
  Rng rng(8);
  Model m = Model::build(cnn_small({1, 8, 8}, 4), 3);
  const Tensor x = random_batch(rng, {5, 1, 8, 8});
  const auto y = random_labels(rng, 5, 4);
  std::size_t calls = 0;
  const ProbFn counted = [&](const Tensor& batch) {
    calls += batch.dim(0);
    return prob_fn(m)(batch);
  };
  AttackConfig cfg;
  cfg.query_budget = 40;
  const auto r = square_attack(counted, x, y, cfg);
  expect_in_ball(r, x, cfg.epsilon);
  std::size_t used = 0;
  for (std::size_t b = 0; b < 5; ++b) {
    EXPECT_LE(r.queries[b], cfg.query_budget);
    used += r.queries[b];
  }
  EXPECT_EQ(used, calls);
}

TEST(Square, LinearToyWithinReach) {
  int successes = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(derive_seed(99, seed));
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    const float w0 = static_cast<float>(std::cos(angle)), w1 = static_cast<float>(std::sin(angle));
    const float eps = 8.0f / 255.0f;
    Tensor x({1, 2}, {static_cast<float>(rng.uniform(0.2, 0.8)), static_cast<float>(rng.uniform(0.2, 0.8))});
    // Place the boundary at half the L-infinity reach of the ball.
    const float reach = eps * (std::abs(w0) + std::abs(w1));
    const float bias = -(w0 * x[0] + w1 * x[1]) + 0.5f * reach;
    const ProbFn f = [&](const Tensor& batch) {
      Tensor z({batch.dim(0), 2});
      for (std::size_t b = 0; b < batch.dim(0); ++b) z.at(b, 0) = w0 * batch.at(b, 0) + w1 * batch.at(b, 1) + bias;
      return softmax(z);
    };
    // Brute force: some corner of the ball crosses the boundary.
    bool reachable = false;
    for (float s0 : {-eps, eps})
      for (float s1 : {-eps, eps}) reachable = reachable || w0 * (x[0] + s0) + w1 * (x[1] + s1) + bias < 0.0f;
    ASSERT_TRUE(reachable);
    const std::vector<std::size_t> y{0};
    AttackConfig cfg;
    cfg.epsilon = eps;
    cfg.query_budget = 500;
    cfg.seed = seed;
    const auto r = square_attack(f, x, y, cfg);
    expect_in_ball(r, x, eps);
    EXPECT_LE(r.queries[0], 500u);
    successes += r.success[0];
  }
  EXPECT_GE(successes, 45);
}

TEST(Attacks, LeaveParametersUntouched) {
  Rng rng(9);
  Model m = Model::build(mlp_deep({6}, 3), 5);
  const auto before = m.checksum();
  const Tensor x = random_batch(rng, {8, 6});
  const auto y = random_labels(rng, 8, 3);
  AttackConfig cfg;
  cfg.query_budget = 30;
  for (auto kind : {AttackKind::Identity, AttackKind::Fgsm, AttackKind::Pgd, AttackKind::CwInf, AttackKind::Apgd,
                    AttackKind::Square}) {
    const auto r = run_attack(kind, logit_fn(m), x, y, cfg);
    expect_in_ball(r, x, cfg.epsilon);
  }
  EXPECT_EQ(m.checksum(), before);
}

TEST(Attacks, BallAndRangePropertyAcrossModels) {
  Rng rng(10);
  for (int trial = 0; trial < 6; ++trial) {
    Model m = Model::build(trial % 2 ? cnn_small({1, 6, 6}, 3) : mlp_deep({36}, 3), trial);
    const Shape shape = trial % 2 ? Shape{4, 1, 6, 6} : Shape{4, 36};
    const Tensor x = random_batch(rng, shape);
    const auto y = random_labels(rng, 4, 3);
    AttackConfig cfg;
    cfg.epsilon = static_cast<float>(rng.uniform(0.0, 0.3));
    cfg.random_start = std::min(cfg.random_start, cfg.epsilon);
    cfg.step_size = 0.05f;
    cfg.query_budget = 20;
    cfg.seed = trial;
    for (auto kind : {AttackKind::Fgsm, AttackKind::Pgd, AttackKind::CwInf, AttackKind::Apgd, AttackKind::Square})
      expect_in_ball(run_attack(kind, logit_fn(m), x, y, cfg), x, cfg.epsilon);
  }
}

TEST(Attacks, NamesRoundTrip) {
  for (auto kind : {AttackKind::Identity, AttackKind::Fgsm, AttackKind::Pgd, AttackKind::CwInf, AttackKind::Apgd,
                    AttackKind::Square})
    EXPECT_EQ(parse_attack_kind(to_string(kind)), kind);
  EXPECT_THROW(parse_attack_kind("deepfool"), UsageError);
}

TEST(Attacks, DeterministicPerSeed) {
  Rng rng(11);
  Model m = Model::build(mlp_deep({6}, 3), 6);
  const Tensor x = random_batch(rng, {8, 6});
  const auto y = random_labels(rng, 8, 3);
  AttackConfig cfg;
  cfg.query_budget = 25;
  cfg.seed = 42;
  for (auto kind : {AttackKind::Pgd, AttackKind::Apgd, AttackKind::Square})
    EXPECT_TRUE(run_attack(kind, logit_fn(m), x, y, cfg).x_adv.identical(run_attack(kind, logit_fn(m), x, y, cfg).x_adv));
}
