#include "crl/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "crl/common.hpp"
#include "crl/tensor.hpp"

namespace crl {
namespace {

TEST(PolyLrTest, EndpointsAreExact) {
  EXPECT_EQ(poly_lr(1e-4, 0, 2000), 1e-4);
  EXPECT_EQ(poly_lr(1e-4, 2000, 2000), 0.0);
  EXPECT_EQ(poly_lr(0.3, 0, 7, 2.5), 0.3);
}

TEST(PolyLrTest, MidpointMatchesClosedForm) {
  // 1e-4 * 0.5^0.9, evaluated independently.
  EXPECT_NEAR(poly_lr(1e-4, 1000, 2000, 0.9), 5.358867312681466e-05, 1e-18);
}

TEST(PolyLrTest, MonotoneNonIncreasing) {
  for (double power : {0.5, 0.9, 2.0}) {
    double prev = poly_lr(1.0, 0, 100, power);
    for (long t = 1; t <= 100; ++t) {
      double lr = poly_lr(1.0, t, 100, power);
      EXPECT_LE(lr, prev) << "t=" << t << " power=" << power;
      prev = lr;
    }
  }
}

TEST(PolyLrTest, PastHorizonClampsToZero) {
  EXPECT_EQ(poly_lr(1e-4, 2001, 2000), 0.0);
  EXPECT_EQ(poly_lr(1e-4, 99999, 2000), 0.0);
}

TEST(PolyLrTest, RejectsBadArguments) {
  EXPECT_THROW(poly_lr(0.0, 0, 10), Error);
  EXPECT_THROW(poly_lr(-1e-4, 0, 10), Error);
  EXPECT_THROW(poly_lr(1e-4, 0, 0), Error);
  EXPECT_THROW(poly_lr(1e-4, -1, 10), Error);
}

Tensor filled(const std::vector<int>& shape, double v) {
  Tensor t(shape);
  t.fill(v);
  return t;
}

TEST(SgdTest, NoMomentumNoDecayIsPlainGradientDescent) {
  Sgd opt(0.0, 0.0);
  Tensor p = filled({3}, 1.0);
  Tensor g({3});
  g[0] = 0.5;
  g[1] = -2.0;
  g[2] = 0.0;
  opt.step("p", p, g, 0.1);
  EXPECT_EQ(p[0], 1.0 - 0.1 * 0.5);
  EXPECT_EQ(p[1], 1.0 - 0.1 * -2.0);
  EXPECT_EQ(p[2], 1.0);
}

TEST(SgdTest, ZeroGradZeroDecayLeavesParamsUntouched) {
  Sgd opt(0.9, 0.0);
  Tensor p({2, 2});
  p[0] = 0.25;
  p[1] = -3.5;
  p[2] = 0.0;
  p[3] = 1e-12;
  Tensor before = p;
  Tensor g({2, 2});
  for (int k = 0; k < 5; ++k) opt.step("p", p, g, 0.1);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], before[i]);
}

TEST(SgdTest, TwoConstantGradStepsDisplaceByLrGradTimesTwoPlusMomentum) {
  // v1 = g, v2 = m*g + g, so p0 - p2 = lr*g*(2 + m).
  const double m = 0.9, lr = 0.01, g0 = 0.7;
  Sgd opt(m, 0.0);
  Tensor p = filled({1}, 5.0);
  Tensor g = filled({1}, g0);
  opt.step("p", p, g, lr);
  opt.step("p", p, g, lr);
  EXPECT_NEAR(5.0 - p[0], lr * g0 * (2.0 + m), 1e-15);
  EXPECT_NEAR(5.0 - p[0], 0.0203, 1e-15);
}

TEST(SgdTest, WeightDecayPullsTowardZero) {
  const double wd = 0.5, lr = 0.1, p0 = 2.0;
  Sgd opt(0.0, wd);
  Tensor p = filled({1}, p0);
  Tensor g({1});
  opt.step("p", p, g, lr);
  EXPECT_DOUBLE_EQ(p[0], p0 - lr * wd * p0);
}

TEST(SgdTest, VelocityIsPerParameterName) {
  // Same math, but the second step lands on a fresh buffer if the name
  // differs, losing the momentum carry-over.
  const double m = 0.9, lr = 0.01;
  Tensor g = filled({1}, 1.0);

  Sgd same(m, 0.0);
  Tensor a = filled({1}, 0.0);
  same.step("x", a, g, lr);
  same.step("x", a, g, lr);

  Sgd split(m, 0.0);
  Tensor b = filled({1}, 0.0);
  split.step("x", b, g, lr);
  split.step("y", b, g, lr);

  EXPECT_NEAR(-a[0], lr * (2.0 + m), 1e-15);
  EXPECT_NEAR(-b[0], lr * 2.0, 1e-15);
}

TEST(SgdTest, RejectsShapeMismatch) {
  Sgd opt(0.9, 0.0);
  Tensor p({2});
  Tensor g({3});
  EXPECT_THROW(opt.step("p", p, g, 0.1), Error);
  // Reusing a name with a different shape is a bug in the caller.
  Tensor q({2});
  opt.step("p", q, Tensor({2}), 0.1);
  Tensor r({4});
  EXPECT_THROW(opt.step("p", r, Tensor({4}), 0.1), Error);
}

TEST(SgdTest, RejectsBadHyperparameters) {
  EXPECT_THROW(Sgd(-0.1, 0.0), Error);
  EXPECT_THROW(Sgd(1.0, 0.0), Error);
  EXPECT_THROW(Sgd(0.9, -1e-4), Error);
}

TEST(AdamTest, FirstStepDisplacementIsRoughlyTheLearningRate) {
  // m-hat/sqrt(v-hat) == g/|g| up to eps, independent of the grad scale.
  for (double g0 : {0.37, -1.8, 200.0}) {
    Adam opt;
    Tensor p = filled({1}, 1.0);
    Tensor g = filled({1}, g0);
    opt.step("p", p, g, 1e-3);
    double disp = 1.0 - p[0];
    EXPECT_NEAR(std::abs(disp), 1e-3, 1e-3 * 1e-6) << "g=" << g0;
    EXPECT_EQ(disp > 0.0, g0 > 0.0) << "g=" << g0;
  }
}

TEST(AdamTest, ZeroGradLeavesParamsUntouched) {
  Adam opt;
  Tensor p({3});
  p[0] = -0.5;
  p[1] = 0.0;
  p[2] = 7.25;
  Tensor before = p;
  Tensor g({3});
  for (int k = 0; k < 3; ++k) opt.step("p", p, g, 1e-3);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], before[i]);
}

TEST(AdamTest, MatchesScalarOracleOverSeveralSteps) {
  // Plain-double transcription of the update rule, kept separate from the
  // tensor loop in the header.
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.05;
  const double grads[4] = {0.3, -0.9, 0.12, 2.0};
  double pref = 1.5, m = 0.0, v = 0.0;
  Adam opt(b1, b2, eps);
  Tensor p = filled({1}, 1.5);
  for (int t = 1; t <= 4; ++t) {
    double gt = grads[t - 1];
    m = b1 * m + (1.0 - b1) * gt;
    v = b2 * v + (1.0 - b2) * gt * gt;
    double mh = m / (1.0 - std::pow(b1, t));
    double vh = v / (1.0 - std::pow(b2, t));
    pref -= lr * mh / (std::sqrt(vh) + eps);

    Tensor g = filled({1}, gt);
    opt.step("p", p, g, lr);
    EXPECT_DOUBLE_EQ(p[0], pref) << "step " << t;
  }
}

TEST(AdamTest, DeterministicAcrossInstances) {
  auto run = [] {
    Adam opt;
    Tensor p = filled({2, 3}, 0.5);
    Rng rng(99);
    for (int t = 0; t < 10; ++t) {
      Tensor g({2, 3});
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.uniform(-1.0, 1.0);
      opt.step("p", p, g, 2e-3);
    }
    return p;
  };
  Tensor a = run();
  Tensor b = run();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(AdamTest, StepCountIsPerParameterName) {
  // After many steps on "x", a fresh parameter "y" still gets the large
  // first-step bias correction rather than x's stale count.
  Adam opt;
  Tensor x = filled({1}, 1.0);
  Tensor g = filled({1}, 1.0);
  for (int t = 0; t < 50; ++t) opt.step("x", x, g, 1e-3);
  Tensor y = filled({1}, 1.0);
  opt.step("y", y, g, 1e-3);
  EXPECT_NEAR(1.0 - y[0], 1e-3, 1e-3 * 1e-6);
}

TEST(AdamTest, RejectsBadHyperparameters) {
  EXPECT_THROW(Adam(1.0, 0.999, 1e-8), Error);
  EXPECT_THROW(Adam(0.9, -0.1, 1e-8), Error);
  EXPECT_THROW(Adam(0.9, 0.999, 0.0), Error);
}

}  // namespace
}  // namespace crl
