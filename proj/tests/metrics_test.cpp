#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "crl/metrics.hpp"

namespace {

using crl::ConfusionMatrix;
using crl::LabelMap;
using crl::Rng;
using crl::Tensor;

// Independent per-pixel oracle: set arithmetic straight off the label maps,
// no confusion matrix involved.
struct OracleIou {
  std::vector<double> per_class;
  std::vector<bool> present;
  double mean = 0.0;
};

OracleIou brute_force_iou(const LabelMap& gt, const LabelMap& pred, int k) {
  OracleIou r;
  r.per_class.assign(static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
  r.present.assign(static_cast<std::size_t>(k), false);
  double sum = 0.0;
  int count = 0;
  for (int c = 1; c <= k; ++c) {
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt.v[i] == 0) continue;  // unscored
      const bool in_gt = gt.v[i] == c;
      const bool in_pred = pred.v[i] == c;
      if (in_gt && in_pred) ++inter;
      if (in_gt || in_pred) ++uni;
    }
    if (uni == 0) continue;
    const double v = static_cast<double>(inter) / static_cast<double>(uni);
    r.per_class[static_cast<std::size_t>(c - 1)] = v;
    r.present[static_cast<std::size_t>(c - 1)] = true;
    sum += v;
    ++count;
  }
  r.mean = sum / count;
  return r;
}

TEST(ConfusionMatrix, CountsAndSkipsIgnored) {
  ConfusionMatrix cm(3);
  LabelMap gt(2, 2), pred(2, 2, 1);
  gt.at(0, 0) = 1;
  gt.at(0, 1) = 2;
  gt.at(1, 0) = 0;  // skipped
  gt.at(1, 1) = 3;
  pred.at(0, 1) = 2;
  pred.at(1, 1) = 2;
  cm.add(gt, pred);
  EXPECT_EQ(cm.scored(), 3u);
  EXPECT_EQ(cm.at(1, 1), 1u);
  EXPECT_EQ(cm.at(2, 2), 1u);
  EXPECT_EQ(cm.at(3, 2), 1u);
  EXPECT_EQ(cm.at(3, 3), 0u);
}

TEST(ConfusionMatrix, RejectsOutOfRange) {
  ConfusionMatrix cm(2);
  EXPECT_THROW(cm.add_pixel(3, 1), crl::Error);
  EXPECT_THROW(cm.add_pixel(1, 0), crl::Error);  // prediction may not be the ignore class
  cm.add_pixel(0, 1);                            // ignored ground truth is fine
  EXPECT_EQ(cm.scored(), 0u);
}

TEST(ConfusionMatrix, MergeIsAssociative) {
  Rng rng(3);
  auto random_cm = [&rng]() {
    ConfusionMatrix cm(4);
    for (int i = 0; i < 40; ++i)
      cm.add_pixel(1 + static_cast<int>(rng.integer(4)), 1 + static_cast<int>(rng.integer(4)));
    return cm;
  };
  ConfusionMatrix a = random_cm(), b = random_cm(), c = random_cm();
  ConfusionMatrix left = a;
  left.merge(b);
  left.merge(c);
  ConfusionMatrix bc = b;
  bc.merge(c);
  ConfusionMatrix right = a;
  right.merge(bc);
  for (int i = 1; i <= 4; ++i)
    for (int j = 1; j <= 4; ++j) EXPECT_EQ(left.at(i, j), right.at(i, j));
}

TEST(Iou, PerfectPrediction) {
  ConfusionMatrix cm(3);
  for (int c = 1; c <= 3; ++c)
    for (int i = 0; i < 5; ++i) cm.add_pixel(c, c);
  auto r = crl::iou(cm);
  EXPECT_EQ(r.present_count, 3);
  for (double v : r.per_class) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(r.mean, 1.0);
}

TEST(Iou, HandWorkedExample) {
  // 4 pixels: gt [1,1,2,2], pred [1,2,2,2]
  ConfusionMatrix cm(2);
  cm.add_pixel(1, 1);
  cm.add_pixel(1, 2);
  cm.add_pixel(2, 2);
  cm.add_pixel(2, 2);
  auto r = crl::iou(cm);
  EXPECT_DOUBLE_EQ(r.per_class[0], 0.5);
  EXPECT_DOUBLE_EQ(r.per_class[1], 2.0 / 3.0);
  EXPECT_NEAR(r.mean, 0.5833, 5e-5);
  EXPECT_DOUBLE_EQ(r.mean, (0.5 + 2.0 / 3.0) / 2.0);
}

TEST(Iou, DisjointPredictionScoresZero) {
  ConfusionMatrix cm(2);
  for (int i = 0; i < 4; ++i) cm.add_pixel(1, 2);
  auto r = crl::iou(cm);
  EXPECT_EQ(r.per_class[0], 0.0);
  EXPECT_EQ(r.per_class[1], 0.0);  // predicted-only class also has empty intersection
}

TEST(Iou, AbsentClassExcludedFromMean) {
  ConfusionMatrix cm(3);  // class 3 never appears anywhere
  cm.add_pixel(1, 1);
  cm.add_pixel(2, 2);
  auto r = crl::iou(cm);
  EXPECT_TRUE(std::isnan(r.per_class[2]));
  EXPECT_FALSE(r.present[2]);
  EXPECT_EQ(r.present_count, 2);
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
}

TEST(Iou, EmptyMatrixRejected) {
  ConfusionMatrix cm(2);
  EXPECT_THROW(crl::iou(cm), crl::Error);
}

TEST(Rmse, Trivials) {
  Tensor gt({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(crl::rmse(gt, gt), 0.0);
  Tensor plus1 = gt;
  for (std::size_t i = 0; i < 4; ++i) plus1[i] += 1.0;
  EXPECT_DOUBLE_EQ(crl::rmse(plus1, gt), 1.0);
  Tensor a({2}, {3.0, 4.0}), b({2}, 0.0);
  EXPECT_DOUBLE_EQ(crl::rmse(a, b), std::sqrt(12.5));
}

TEST(Rmse, MaskedPixelsExcluded) {
  Tensor pred({1, 2}, {100.0, 2.0});
  Tensor gt({1, 2}, {1.0, 1.0});
  LabelMap mask(1, 2, 1);
  mask.at(0, 0) = 0;
  EXPECT_DOUBLE_EQ(crl::rmse(pred, gt, &mask), 1.0);
  mask.at(0, 1) = 0;
  EXPECT_THROW(crl::rmse(pred, gt, &mask), crl::Error);  // nothing left
}

TEST(ArgmaxLabels, PicksHighestAndBreaksTiesLow) {
  Tensor logits({3, 1, 2});
  logits(0, 0, 0) = 1.0;
  logits(1, 0, 0) = 5.0;
  logits(2, 0, 0) = 2.0;
  logits(0, 0, 1) = 7.0;  // tie between class 1 and 3
  logits(2, 0, 1) = 7.0;
  LabelMap out = crl::argmax_labels(logits);
  EXPECT_EQ(out.at(0, 0), 2);
  EXPECT_EQ(out.at(0, 1), 1);
}

TEST(MetricsOracle, RandomMapsMatchBruteForceExactly) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.integer(5));
    LabelMap gt(8, 8), pred(8, 8);
    bool any = false;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt.v[i] = static_cast<int>(rng.integer(static_cast<std::uint64_t>(k) + 1));  // 0..k
      pred.v[i] = 1 + static_cast<int>(rng.integer(static_cast<std::uint64_t>(k)));
      any = any || gt.v[i] != 0;
    }
    if (!any) gt.v[0] = 1;

    ConfusionMatrix cm(k);
    cm.add(gt, pred);
    auto ours = crl::iou(cm);
    auto oracle = brute_force_iou(gt, pred, k);
    ASSERT_EQ(ours.present_count,
              static_cast<int>(std::count(oracle.present.begin(), oracle.present.end(), true)));
    for (int c = 0; c < k; ++c) {
      ASSERT_EQ(ours.present[c], oracle.present[c]);
      if (oracle.present[c]) {
        ASSERT_EQ(ours.per_class[c], oracle.per_class[c]);
      }
    }
    ASSERT_EQ(ours.mean, oracle.mean);

    // rmse against direct arithmetic, with the same mask convention
    Tensor p = Tensor::uniform({8, 8}, rng, 0.1, 5.0);
    Tensor g = Tensor::uniform({8, 8}, rng, 0.1, 5.0);
    double sq = 0.0;
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (gt.v[i] == 0) continue;
      sq += (p[i] - g[i]) * (p[i] - g[i]);
      ++n;
    }
    if (n == 0) continue;
    ASSERT_EQ(crl::rmse(p, g, &gt), std::sqrt(sq / static_cast<double>(n)));
  }
}

}  // namespace
