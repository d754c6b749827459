#include <gtest/gtest.h>

#include <cmath>

#include "crl/losses.hpp"

namespace {

using crl::LabelMap;
using crl::Rng;
using crl::Tape;
using crl::Tensor;
using crl::Var;

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  const int K = 14;
  Tape t;
  Var logits = t.leaf(Tensor({K, 2, 3}, 0.7));  // equal logits, any constant
  LabelMap labels(2, 3, 5);
  auto r = crl::cross_entropy_loss(t, logits, labels);
  EXPECT_NEAR(t.value(r.loss).item(), std::log(14.0), 1e-9);
  EXPECT_EQ(r.scored, 6);
  EXPECT_FALSE(r.all_ignored());
}

TEST(CrossEntropy, SaturatedCorrectLogitGivesNearZero) {
  Tape t;
  Tensor lv({3, 1, 1});
  lv(1, 0, 0) = 100.0;
  Var logits = t.leaf(lv);
  LabelMap labels(1, 1, 2);
  auto r = crl::cross_entropy_loss(t, logits, labels);
  EXPECT_NEAR(t.value(r.loss).item(), 0.0, 1e-9);
}

TEST(CrossEntropy, IgnoresLabelZeroPixels) {
  Tape t;
  Tensor lv({2, 1, 2});
  lv(0, 0, 1) = 1e6;  // absurd logits on the ignored pixel must not matter
  Var logits = t.leaf(lv);
  LabelMap labels(1, 2);
  labels.at(0, 0) = 1;
  labels.at(0, 1) = 0;
  auto r = crl::cross_entropy_loss(t, logits, labels);
  EXPECT_EQ(r.scored, 1);
  EXPECT_NEAR(t.value(r.loss).item(), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, AllIgnoredIsZeroWithFlag) {
  Tape t;
  Var logits = t.leaf(Tensor({4, 2, 2}));
  LabelMap labels(2, 2, 0);
  auto r = crl::cross_entropy_loss(t, logits, labels);
  EXPECT_TRUE(r.all_ignored());
  EXPECT_EQ(t.value(r.loss).item(), 0.0);
  t.backward(r.loss);
  for (std::size_t i = 0; i < t.grad(logits).size(); ++i)
    EXPECT_EQ(t.grad(logits)[i], 0.0);
}

TEST(CrossEntropy, RejectsOutOfRangeLabels) {
  Tape t;
  Var logits = t.leaf(Tensor({3, 1, 1}));
  LabelMap labels(1, 1, 4);  // K = 3
  EXPECT_THROW(crl::cross_entropy_loss(t, logits, labels), crl::Error);
  labels.at(0, 0) = -1;
  EXPECT_THROW(crl::cross_entropy_loss(t, logits, labels), crl::Error);
}

TEST(CrossEntropy, StrictlyDecreasesWhenTrueLogitRises) {
  Rng rng(4);
  Tape t;
  Tensor base = Tensor::normal({5, 3, 3}, rng);
  LabelMap labels(3, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) labels.at(y, x) = 1 + static_cast<int>(rng.integer(5));
  Var l1 = t.leaf(base);
  double before = t.value(crl::cross_entropy_loss(t, l1, labels).loss).item();
  Tensor bumped = base;
  bumped(labels.at(1, 2) - 1, 1, 2) += 0.25;
  Var l2 = t.leaf(bumped);
  double after = t.value(crl::cross_entropy_loss(t, l2, labels).loss).item();
  EXPECT_LT(after, before);
}

TEST(CrossEntropy, SensitiveToArgmaxPreservingChanges) {
  // Raising a losing class's logit keeps the argmax but changes the loss;
  // a constant added to all classes of a pixel changes neither (softmax).
  Tape t;
  Tensor base({3, 1, 1});
  base(0, 0, 0) = 2.0;
  base(1, 0, 0) = 0.5;
  base(2, 0, 0) = -1.0;
  LabelMap labels(1, 1, 1);
  double l_base =
      t.value(crl::cross_entropy_loss(t, t.leaf(base), labels).loss).item();

  Tensor losing_bump = base;
  losing_bump(2, 0, 0) += 1.0;  // still argmax class 1
  EXPECT_NE(t.value(crl::cross_entropy_loss(t, t.leaf(losing_bump), labels).loss).item(),
            l_base);

  Tensor shifted = base;
  for (int c = 0; c < 3; ++c) shifted(c, 0, 0) += 7.5;
  EXPECT_NEAR(t.value(crl::cross_entropy_loss(t, t.leaf(shifted), labels).loss).item(),
              l_base, 1e-12);
}

TEST(SmoothL1, PiecewiseValues) {
  Tape t;
  Var p = t.leaf(Tensor({1, 2}, {0.5, -2.0}));
  Tensor gt({1, 2}, 0.0);
  // D(0.5) = 0.125, D(-2) = 1.5, mean = 0.8125
  EXPECT_DOUBLE_EQ(t.value(crl::smooth_l1_loss(t, p, gt)).item(), 0.8125);
}

TEST(SmoothL1, BothPiecesAgreeAtOne) {
  Tape t;
  Var hi = t.leaf(Tensor({1}, {1.0}));
  Tensor gt({1}, 0.0);
  EXPECT_DOUBLE_EQ(t.value(crl::smooth_l1_loss(t, hi, gt)).item(), 0.5);
  // continuity just around the kink
  Var lo = t.leaf(Tensor({1}, {1.0 - 1e-9}));
  Var up = t.leaf(Tensor({1}, {1.0 + 1e-9}));
  EXPECT_NEAR(t.value(crl::smooth_l1_loss(t, lo, gt)).item(), 0.5, 1e-8);
  EXPECT_NEAR(t.value(crl::smooth_l1_loss(t, up, gt)).item(), 0.5, 1e-8);
}

TEST(SmoothL1, OnceDifferentiableAtKink) {
  // left/right derivative both 1 around |r| = 1
  Tensor gt({1}, 0.0);
  auto deriv_at = [&](double r) {
    Tape t;
    Var p = t.leaf(Tensor({1}, {r}));
    t.backward(crl::smooth_l1_loss(t, p, gt));
    return t.grad(p)[0];
  };
  EXPECT_NEAR(deriv_at(1.0 - 1e-7), 1.0, 1e-6);
  EXPECT_NEAR(deriv_at(1.0 + 1e-7), 1.0, 1e-6);
  EXPECT_DOUBLE_EQ(deriv_at(0.5), 0.5);   // quadratic region: D'(r) = r
  EXPECT_DOUBLE_EQ(deriv_at(-3.0), -1.0);  // linear region: D'(r) = sign(r)
}

TEST(SmoothL1, MaskExcludesPixels) {
  Tape t;
  Var p = t.leaf(Tensor({2, 2}, {10.0, 0.5, 10.0, -0.5}));
  Tensor gt({2, 2}, 0.0);
  LabelMap mask(2, 2, 1);
  mask.at(0, 0) = 0;
  mask.at(1, 0) = 0;
  EXPECT_DOUBLE_EQ(t.value(crl::smooth_l1_loss(t, p, gt, &mask)).item(), 0.125);
}

TEST(L2Loss, MeanSquaredResidual) {
  Tape t;
  Var p = t.leaf(Tensor({2}, {1.0, -3.0}));
  Tensor gt({2}, 0.0);
  EXPECT_DOUBLE_EQ(t.value(crl::l2_loss(t, p, gt)).item(), 5.0);
  t.zero_grad();
  Var p2 = t.leaf(Tensor({2}, {1.0, -3.0}));
  t.backward(crl::l2_loss(t, p2, gt));
  EXPECT_DOUBLE_EQ(t.grad(p2)[0], 1.0);   // 2r/n = 2*1/2
  EXPECT_DOUBLE_EQ(t.grad(p2)[1], -3.0);
}

TEST(ScaleInvariant, PerfectPredictionIsZero) {
  Tape t;
  Var p = t.leaf(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Tensor gt({2, 2}, {1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(t.value(crl::scale_invariant_loss(t, p, gt, 0.5)).item(), 0.0);
}

TEST(ScaleInvariant, GlobalScaleVanishesAtLambdaOne) {
  Rng rng(9);
  Tape t;
  Tensor gt = Tensor::uniform({3, 3}, rng, 0.5, 4.0);
  Tensor pred = gt;
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] *= 2.7;
  Var p = t.leaf(pred);
  EXPECT_NEAR(t.value(crl::scale_invariant_loss(t, p, gt, 1.0)).item(), 0.0, 1e-12);
}

TEST(ScaleInvariant, ScaledPairEqualsOriginal) {
  Rng rng(10);
  Tensor gt = Tensor::uniform({4, 4}, rng, 0.5, 4.0);
  Tensor pred = Tensor::uniform({4, 4}, rng, 0.5, 4.0);
  auto value = [&](const Tensor& pp, const Tensor& gg) {
    Tape t;
    return t.value(crl::scale_invariant_loss(t, t.leaf(pp), gg, 0.5)).item();
  };
  double base = value(pred, gt);
  Tensor p2 = pred, g2 = gt;
  for (std::size_t i = 0; i < p2.size(); ++i) {
    p2[i] *= 3.14;
    g2[i] *= 3.14;
  }
  EXPECT_NEAR(value(p2, g2), base, 1e-12);
}

TEST(ScaleInvariant, ConstantLogRatioValue) {
  // pred = e * gt -> every e_i = 1: mean(e^2) - 0.5 * mean(e)^2 = 0.5
  Tape t;
  Tensor gt({2, 2}, {1.0, 2.0, 0.5, 3.0});
  Tensor pred = gt;
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] *= std::exp(1.0);
  Var p = t.leaf(pred);
  EXPECT_NEAR(t.value(crl::scale_invariant_loss(t, p, gt, 0.5)).item(), 0.5, 1e-12);
}

TEST(ScaleInvariant, RejectsNonPositive) {
  Tape t;
  Var p = t.leaf(Tensor({1, 2}, {1.0, -0.5}));
  Tensor gt({1, 2}, 1.0);
  EXPECT_THROW(crl::scale_invariant_loss(t, p, gt, 0.5), crl::Error);
  Var p2 = t.leaf(Tensor({1, 2}, 1.0));
  Tensor gt2({1, 2}, {1.0, 0.0});
  EXPECT_THROW(crl::scale_invariant_loss(t, p2, gt2, 0.5), crl::Error);
}

TEST(TotalObjective, CombinationAndOptionalCorrelation) {
  crl::LossWeights w;
  w.lambda_rec = 2.0;
  w.lambda_corr = 0.0;
  Tape t;
  Var ss = t.leaf(Tensor::scalar(1.5));
  Var d = t.leaf(Tensor::scalar(0.25));
  Var rec = t.leaf(Tensor::scalar(3.0));
  Var total = crl::total_objective(t, ss, d, rec, Var{}, w);
  EXPECT_DOUBLE_EQ(t.value(total).item(), 1.5 + 0.25 + 2.0 * 3.0);

  w.lambda_corr = 0.5;
  Var corr = t.leaf(Tensor::scalar(0.8));
  Var total2 = crl::total_objective(t, ss, d, rec, corr, w);
  EXPECT_DOUBLE_EQ(t.value(total2).item(), (1.5 + 0.25 + 6.0) - 0.4);
}

TEST(TotalObjective, VarAndValuePathsBitMatch) {
  // the logged total must be re-derivable from logged components exactly
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    crl::LossWeights w;
    w.lambda_rec = rng.uniform(0.0, 3.0);
    w.lambda_corr = trial % 2 ? rng.uniform(0.0, 1.0) : 0.0;
    double ss = rng.uniform(0.0, 4.0), d = rng.uniform(0.0, 4.0);
    double rec = rng.uniform(0.0, 4.0), corr = rng.uniform(-1.0, 1.0);
    Tape t;
    Var total = crl::total_objective(t, t.leaf(Tensor::scalar(ss)),
                                     t.leaf(Tensor::scalar(d)),
                                     t.leaf(Tensor::scalar(rec)),
                                     t.leaf(Tensor::scalar(corr)), w);
    double recomputed = crl::total_objective_value(ss, d, rec, corr, w);
    EXPECT_EQ(t.value(total).item(), recomputed);
  }
}

TEST(TotalObjective, LambdaZeroKeepsReconstructionUnoptimized) {
  crl::LossWeights w;
  w.lambda_rec = 0.0;
  Tape t;
  Var ss = t.leaf(Tensor::scalar(1.0));
  Var d = t.leaf(Tensor::scalar(1.0));
  Var rec = t.leaf(Tensor::scalar(5.0));
  Var total = crl::total_objective(t, ss, d, rec, Var{}, w);
  EXPECT_DOUBLE_EQ(t.value(total).item(), 2.0);
  t.backward(total);
  EXPECT_EQ(t.grad(rec)[0], 0.0);  // reported but not optimized
  EXPECT_EQ(t.grad(ss)[0], 1.0);
}

}  // namespace
