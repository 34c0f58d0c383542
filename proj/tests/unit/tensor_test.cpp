#include <gtest/gtest.h>

#include <cmath>

#include "darht/errors.hpp"
#include "darht/ops.hpp"
#include "darht/optim.hpp"
#include "darht/rng.hpp"
#include "darht/tape.hpp"

namespace darht {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

TEST(TensorTest, RejectsShapeDataMismatch) {
  EXPECT_THROW(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), DimensionError);
  EXPECT_THROW(Tensor(Shape{0, 3}), DimensionError);
}

TEST(TensorTest, RowsAndGather) {
  Tensor t({3, 2}, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(t.rows(1, 3).identical(Tensor({2, 2}, {3, 4, 5, 6})));
  const std::size_t idx[] = {2, 0};
  EXPECT_TRUE(t.gather_rows(idx).identical(Tensor({2, 2}, {5, 6, 1, 2})));
}

TEST(MatmulTest, IdentityLeavesMatrixUnchanged) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 3}, {1.5f, -2, 3, 4, 0.25f, -6});
  EXPECT_TRUE(matmul(eye, a).identical(a));
}

TEST(MatmulTest, HandComputedProduct) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {5, 6});
  EXPECT_TRUE(matmul(a, b).identical(Tensor({2, 1}, {17, 39})));
}

TEST(MatmulTest, InnerExtentMismatchThrows) {
  Tensor a({2, 3});
  Tensor b({2, 2});
  EXPECT_THROW(matmul(a, b), DimensionError);
  Tape tape;
  EXPECT_THROW(matmul(tape.constant(a), tape.constant(b)), DimensionError);
}

TEST(MatmulTest, AssociativeWithinTolerance) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({5, 2}, rng);
    Tensor left = matmul(matmul(a, b), c);
    Tensor right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) EXPECT_NEAR(left[i], right[i], 1e-5);
  }
}

TEST(Conv2dTest, UnitKernelIsIdentity) {
  Rng rng(3);
  Tape tape;
  Tensor x = random_tensor({1, 4, 5}, rng);
  Var y = conv2d(tape.constant(x), tape.constant(Tensor({1, 1, 1, 1}, {1.0f})), 1);
  EXPECT_TRUE(y.value().identical(x));
}

TEST(Conv2dTest, OnesKernelSumsWindows) {
  Tape tape;
  Var y = conv2d(tape.constant(Tensor::filled({1, 3, 3}, 1.0f)), tape.constant(Tensor::filled({1, 1, 2, 2}, 1.0f)), 1);
  EXPECT_TRUE(y.value().identical(Tensor({1, 2, 2}, {4, 4, 4, 4})));
}

TEST(Conv2dTest, StrideShrinksOutput) {
  Tape tape;
  Var y = conv2d(tape.constant(Tensor::filled({2, 7, 6}, 1.0f)), tape.constant(Tensor::filled({3, 2, 3, 2}, 1.0f)), 2);
  EXPECT_EQ(y.shape(), (Shape{3, 3, 3}));
  EXPECT_FLOAT_EQ(y.value()[0], 12.0f);
}

TEST(Conv2dTest, KernelLargerThanInputThrows) {
  Tape tape;
  EXPECT_THROW(conv2d(tape.constant(Tensor({1, 3, 3})), tape.constant(Tensor({1, 1, 4, 4})), 1), DimensionError);
}

TEST(SoftmaxTest, SymmetricLogitsGiveUniform) {
  Tensor p = softmax(Tensor({2}, {0.0f, 0.0f}));
  EXPECT_FLOAT_EQ(p[0], 0.5f);
  EXPECT_FLOAT_EQ(p[1], 0.5f);
}

TEST(SoftmaxTest, LogTwoAgainstZero) {
  Tensor p = softmax(Tensor({2}, {static_cast<float>(std::log(2.0)), 0.0f}));
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-7);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-7);
}

TEST(SoftmaxTest, ShiftInvariantAndNormalized) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor z = random_tensor({7}, rng, -50, 50);
    Tensor shifted = z;
    const float c = static_cast<float>(rng.uniform(-20, 20));
    for (auto& v : shifted.data()) v += c;
    Tensor p = softmax(z), q = softmax(shifted);
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GT(p[i], -1e-30f);
      EXPECT_NEAR(p[i], q[i], 1e-5);
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(SoftmaxTest, LargeLogitsStayFinite) {
  Tensor p = softmax(Tensor({3}, {50.0f, -50.0f, 49.0f}));
  EXPECT_TRUE(p.all_finite());
  Tensor lp = log_softmax(Tensor({3}, {50.0f, -50.0f, 49.0f}));
  EXPECT_TRUE(lp.all_finite());
}

TEST(BackwardTest, SumOfSquaresGradientIsTwiceInput) {
  Tape tape;
  Var x = tape.variable(Tensor({4}, {1.0f, -2.0f, 0.5f, 3.0f}));
  tape.backward(sum(square(x)));
  EXPECT_TRUE(x.grad().identical(Tensor({4}, {2.0f, -4.0f, 1.0f, 6.0f})));
}

TEST(BackwardTest, ConstantLossGivesZeroGradient) {
  Tape tape;
  Var x = tape.variable(Tensor({3}, {1, 2, 3}));
  Var c = tape.constant(Tensor::scalar(5.0f));
  tape.backward(c);
  EXPECT_TRUE(x.grad().identical(Tensor({3})));
}

TEST(BackwardTest, FanInAccumulates) {
  Tape tape;
  Var x = tape.variable(Tensor({2}, {1.0f, 2.0f}));
  tape.backward(sum(add(mul(x, x), x)));
  EXPECT_TRUE(x.grad().identical(Tensor({2}, {3.0f, 5.0f})));
}

TEST(BackwardTest, NonScalarLossIsUsageError) {
  Tape tape;
  Var x = tape.variable(Tensor({2}, {1.0f, 2.0f}));
  EXPECT_THROW(tape.backward(square(x)), UsageError);
}

TEST(BackwardTest, SecondBackwardIsUsageError) {
  Tape tape;
  Var x = tape.variable(Tensor({2}, {1.0f, 2.0f}));
  Var loss = sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), UsageError);
  EXPECT_THROW(sum(x), UsageError);
}

TEST(BackwardTest, NonFiniteInputRejected) {
  Tape tape;
  EXPECT_THROW(tape.variable(Tensor({1}, {std::nanf("")})), NumericError);
  EXPECT_THROW(tape.constant(Tensor({1}, {INFINITY})), NumericError);
}

TEST(BackwardTest, OpsAcrossTapesRejected) {
  Tape a, b;
  EXPECT_THROW(add(a.variable(Tensor({1})), b.variable(Tensor({1}))), UsageError);
}

TEST(BackwardTest, AverageSplitsGradient) {
  Tape tape;
  Var a = tape.variable(Tensor({2}, {1, 2}));
  Var b = tape.constant(Tensor({2}, {3, 4}));
  Var c = tape.variable(Tensor({2}, {5, 6}));
  const Var parts[] = {a, b, c};
  Var avg = average(parts);
  EXPECT_TRUE(avg.value().identical(Tensor({2}, {3, 4})));
  tape.backward(sum(avg));
  EXPECT_NEAR(a.grad()[0], 1.0 / 3.0, 1e-7);
  EXPECT_NEAR(c.grad()[1], 1.0 / 3.0, 1e-7);
}

// Coarse check of every primitive's backward against central differences of
// the float forward. The tight double-precision oracle lives in model_test.
TEST(BackwardTest, PrimitiveGradientsMatchFiniteDifferences) {
  Rng rng(2024);
  const std::size_t labels[] = {1, 0};
  auto composite = [&](Var x, Var w, Var k) {
    Var h = matmul(x, w);                                 // [2 x 3]
    Var c = reshape(conv2d(reshape(h, {1, 2, 3}), k, 1), {1, 2});
    Var mixed = add(slice_cols(h, 1, 3), scale(slice_cols(softmax(h), 0, 2), 0.7f));
    Var loss = add(mean(cross_entropy(h, labels)), sum(row_sum(square(maximum(mixed, -0.3f)))));
    loss = add(loss, sum(mul(c, c)));
    loss = sub(loss, sum(log_clamped(softmax(h), 1e-12f)));
    return loss;
  };
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x0 = random_tensor({2, 4}, rng), w0 = random_tensor({4, 3}, rng), k0 = random_tensor({1, 1, 2, 2}, rng);
    Tape tape;
    Var x = tape.variable(x0), w = tape.variable(w0), k = tape.variable(k0);
    Var loss = composite(x, w, k);
    tape.backward(loss);
    auto eval = [&](const Tensor& xv, const Tensor& wv, const Tensor& kv) {
      Tape t;
      return static_cast<double>(composite(t.constant(xv), t.constant(wv), t.constant(kv)).value().item());
    };
    auto check = [&](Tensor base, const Tensor& grad, int which) {
      for (std::size_t i = 0; i < base.size(); ++i) {
        // Float forward: step large enough to dominate rounding.
        const float h = 1e-2f;
        Tensor plus = base, minus = base;
        plus[i] += h;
        minus[i] -= h;
        double fp, fm;
        if (which == 0) {
          fp = eval(plus, w0, k0);
          fm = eval(minus, w0, k0);
        } else if (which == 1) {
          fp = eval(x0, plus, k0);
          fm = eval(x0, minus, k0);
        } else {
          fp = eval(x0, w0, plus);
          fm = eval(x0, w0, minus);
        }
        const double fd = (fp - fm) / (static_cast<double>(plus[i]) - minus[i]);
        EXPECT_NEAR(grad[i], fd, 2e-2 * std::max(1.0, std::abs(fd))) << "param " << which << " index " << i;
      }
    };
    check(x0, x.grad(), 0);
    check(w0, w.grad(), 1);
    check(k0, k.grad(), 2);
  }
}

TEST(SgdTest, PlainStep) {
  std::vector<Tensor> p{Tensor::scalar(1.0f)};
  std::vector<Tensor> g{Tensor::scalar(0.5f)};
  OptimState s(SgdConfig{0.1f, 0.0f, 0.0f});
  sgd_step(p, g, s);
  EXPECT_NEAR(p[0].item(), 0.95f, 1e-7);
}

TEST(SgdTest, ZeroGradientZeroDecayIsFixedPoint) {
  std::vector<Tensor> p{Tensor({3}, {1.0f, -2.0f, 0.25f})};
  const Tensor before = p[0];
  std::vector<Tensor> g{Tensor({3})};
  OptimState s(SgdConfig{0.1f, 0.9f, 0.0f});
  for (int i = 0; i < 5; ++i) sgd_step(p, g, s);
  EXPECT_TRUE(p[0].identical(before));
}

TEST(SgdTest, WeightDecayOnly) {
  std::vector<Tensor> p{Tensor::scalar(1.0f)};
  std::vector<Tensor> g{Tensor::scalar(0.0f)};
  OptimState s(SgdConfig{0.1f, 0.0f, 2e-4f});
  sgd_step(p, g, s);
  EXPECT_NEAR(p[0].item(), 0.99998f, 1e-7);
}

TEST(SgdTest, MomentumAccumulates) {
  std::vector<Tensor> p{Tensor::scalar(0.0f)};
  std::vector<Tensor> g{Tensor::scalar(1.0f)};
  OptimState s(SgdConfig{0.1f, 0.9f, 0.0f});
  sgd_step(p, g, s);
  sgd_step(p, g, s);
  // v1 = 1, v2 = 1.9; theta = -0.1 - 0.19
  EXPECT_NEAR(p[0].item(), -0.29f, 1e-6);
  EXPECT_EQ(s.velocity()[0].shape(), p[0].shape());
}

TEST(SgdTest, ShapeMismatchThrows) {
  std::vector<Tensor> p{Tensor({2})};
  std::vector<Tensor> g{Tensor({3})};
  OptimState s;
  EXPECT_THROW(sgd_step(p, g, s), DimensionError);
}

}  // namespace
}  // namespace darht
