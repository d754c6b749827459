#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "crl/gradcheck.hpp"

using namespace crl;

namespace {

TEST(FiniteDiffTest, SumOfSquaresIsNearlyExact) {
  Rng rng(5);
  Tensor x = Tensor::uniform({3, 3}, rng, -2.0, 2.0);
  const double err = finite_diff_check(
      [](Tape& t, Var v) { return reduce_sum(t, mul(t, v, v)); }, x, 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(FiniteDiffTest, LinearFunctionIsExactUpToRounding) {
  Rng rng(6);
  Tensor x = Tensor::uniform({2, 4}, rng, -1.0, 1.0);
  const double err = finite_diff_check(
      [](Tape& t, Var v) { return reduce_sum(t, scale(t, v, 1.3)); }, x, 1e-5);
  EXPECT_LT(err, 1e-9);
}

TEST(FiniteDiffTest, ConvWithMeanOnTinyInput) {
  Rng rng(7);
  Tensor x = Tensor::uniform({1, 4, 4}, rng, -1.0, 1.0);
  Tensor k = Tensor::uniform({2, 1, 3, 3}, rng, -1.0, 1.0);
  const double err = finite_diff_check(
      [&k](Tape& t, Var v) { return reduce_mean(t, conv2d(t, v, t.leaf(k))); }, x, 1e-5);
  EXPECT_LT(err, 1e-4);
}

TEST(FiniteDiffTest, NonFiniteValuesAreReported) {
  Tensor nan_in({2}, {std::numeric_limits<double>::quiet_NaN(), 1.0});
  EXPECT_THROW(finite_diff_check([](Tape& t, Var v) { return reduce_mean(t, tanh(t, v)); },
                                 nan_in, 1e-5),
               Error);
  Tensor huge({2}, {1e308, 1e308});
  EXPECT_THROW(
      finite_diff_check([](Tape& t, Var v) { return reduce_sum(t, add(t, v, v)); }, huge,
                        1e-5),
      Error);
}

TEST(FiniteDiffTest, RejectsNonPositiveEps) {
  Tensor x({2}, 1.0);
  EXPECT_THROW(finite_diff_check([](Tape& t, Var v) { return reduce_sum(t, v); }, x, 0.0),
               Error);
}

TEST(GradCaseRegistryTest, EveryRegisteredOpPassesAtTenRandomPoints) {
  for (const GradCase& c : standard_gradcheck_cases()) {
    const double worst = c.max_rel(1234);
    EXPECT_LT(worst, 1e-4) << c.name;
  }
}

TEST(GradCaseRegistryTest, CoversEveryDifferentiableOpAndLoss) {
  std::vector<std::string> want{
      "add",           "sub",        "mul",           "scale",
      "tanh",          "sigmoid",    "relu",          "softplus",
      "bias_add",      "reshape",    "stack",         "upsample_bilinear",
      "reduce_sum",    "reduce_mean", "reduce_max",   "conv2d",
      "cross_entropy", "smooth_l1",  "l2",            "scale_invariant",
      "reconstruction_loss", "correlation"};
  auto cases = standard_gradcheck_cases();
  for (const std::string& name : want) {
    bool found = false;
    for (const GradCase& c : cases) found = found || c.name == name;
    EXPECT_TRUE(found) << "registry is missing " << name;
  }
  EXPECT_EQ(cases.size(), want.size());
}

TEST(GradCaseRegistryTest, DeliberatelyBrokenBackwardIsCaught) {
  const double worst = inject_fault_case().max_rel(1234);
  EXPECT_GT(worst, 1e-2);
}

}  // namespace
