#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "crl/losses.hpp"
#include "crl/mvae.hpp"

// Finite-difference oracle for the tape gradients, plus a registry of checks
// covering every differentiable op and loss. The registry is what both the
// test suite and the gradcheck command run.

namespace crl {

using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Central differences against tape gradients over the given inputs (all of
/// them unless `check` narrows the list). Returns the max over coordinates of
/// |a-n| / max(1e-8, |a|+|n|). The function must be scalar-valued and pure.
inline double finite_diff_check(const TapeFn& f, const std::vector<Tensor>& inputs,
                                double eps = 1e-5, std::vector<int> check = {}) {
  CRL_CHECK(eps > 0.0, "finite_diff_check: eps must be positive, got " << eps);
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const Tensor& x : xs) vars.push_back(t.leaf(x));
    const double v = t.value(f(t, vars)).item();
    CRL_CHECK(std::isfinite(v), "finite_diff_check: function value is not finite");
    return v;
  };

  Tape t;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& x : inputs) vars.push_back(t.leaf(x));
  Var out = f(t, vars);
  t.backward(out);
  std::vector<Tensor> grads;
  grads.reserve(inputs.size());
  for (Var v : vars) grads.push_back(t.grad(v));

  if (check.empty()) {
    check.resize(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) check[i] = static_cast<int>(i);
  }
  std::vector<Tensor> work = inputs;
  double worst = 0.0;
  for (int idx : check) {
    CRL_CHECK(idx >= 0 && idx < static_cast<int>(inputs.size()),
              "finite_diff_check: input index " << idx << " out of range");
    Tensor& x = work[static_cast<std::size_t>(idx)];
    for (std::size_t e = 0; e < x.size(); ++e) {
      const double orig = x[e];
      x[e] = orig + eps;
      const double fp = eval(work);
      x[e] = orig - eps;
      const double fm = eval(work);
      x[e] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = grads[static_cast<std::size_t>(idx)][e];
      CRL_CHECK(std::isfinite(analytic), "finite_diff_check: non-finite gradient");
      const double rel = std::abs(analytic - numeric) /
                         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

/// Single-tensor convenience form.
inline double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                                double eps = 1e-5) {
  return finite_diff_check(
      [&f](Tape& t, const std::vector<Var>& in) { return f(t, in[0]); }, {x}, eps);
}

/// One registered check: runs 10 random points off the given seed and reports
/// the worst relative error seen.
struct GradCase {
  std::string name;
  std::function<double(uint64_t seed)> max_rel;
};

namespace gradcheck_detail {

inline constexpr int kPoints = 10;

/// Values with pairwise gaps well above eps, so max picks a stable winner.
inline Tensor detied(std::vector<int> shape, Rng& rng) {
  Tensor x(std::move(shape));
  std::vector<std::size_t> order(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.integer(static_cast<uint64_t>(i))]);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[order[i]] = 0.1 * static_cast<double>(i) + rng.uniform(0.0, 0.01);
  return x;
}

/// Magnitudes at least 0.1 with random sign, keeping relu inputs off the kink.
inline Tensor off_kink(std::vector<int> shape, Rng& rng) {
  Tensor x(std::move(shape));
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.1, 1.2);
  return x;
}

template <class MakeInputs, class Fn>
GradCase pointwise_case(std::string name, MakeInputs make, Fn fn,
                        std::vector<int> check = {}) {
  return {std::move(name), [make = std::move(make), fn = std::move(fn),
                            check = std::move(check)](uint64_t seed) {
            double worst = 0.0;
            for (int p = 0; p < kPoints; ++p) {
              Rng rng(mix_seed(seed, static_cast<uint64_t>(p)));
              worst = std::max(worst, finite_diff_check(fn, make(rng), 1e-5, check));
            }
            return worst;
          }};
}

}  // namespace gradcheck_detail

/// Every differentiable op and loss, each checked at 10 random points.
inline std::vector<GradCase> standard_gradcheck_cases() {
  using gradcheck_detail::detied;
  using gradcheck_detail::off_kink;
  using gradcheck_detail::pointwise_case;
  std::vector<GradCase> cases;

  auto pair_inputs = [](Rng& rng) {
    return std::vector<Tensor>{Tensor::uniform({2, 3}, rng, -1.0, 1.5),
                               Tensor::uniform({2, 3}, rng, -1.0, 1.5)};
  };
  auto single = [](double lo, double hi) {
    return [lo, hi](Rng& rng) {
      return std::vector<Tensor>{Tensor::uniform({2, 3}, rng, lo, hi)};
    };
  };

  cases.push_back(pointwise_case("add", pair_inputs,
                                 [](Tape& t, const std::vector<Var>& in) {
                                   return reduce_mean(t, add(t, in[0], in[1]));
                                 }));
  cases.push_back(pointwise_case("sub", pair_inputs,
                                 [](Tape& t, const std::vector<Var>& in) {
                                   return reduce_mean(t, sub(t, in[0], in[1]));
                                 }));
  cases.push_back(pointwise_case("mul", pair_inputs,
                                 [](Tape& t, const std::vector<Var>& in) {
                                   return reduce_mean(t, mul(t, in[0], in[1]));
                                 }));
  cases.push_back(pointwise_case("scale", single(-1.5, 1.5),
                                 [](Tape& t, const std::vector<Var>& in) {
                                   return reduce_mean(t, scale(t, in[0], -1.7));
                                 }));
  cases.push_back(pointwise_case("tanh", single(-2.0, 2.0),
                                 [](Tape& t, const std::vector<Var>& in) {
                                   return reduce_mean(t, tanh(t, in[0]));
                                 }));
  cases.push_back(pointwise_case("sigmoid", single(-2.0, 2.0),
                                 [](Tape& t, const std::vector<Var>& in) {
                                   return reduce_mean(t, sigmoid(t, in[0]));
                                 }));
  cases.push_back(pointwise_case(
      "relu",
      [](Rng& rng) { return std::vector<Tensor>{off_kink({2, 3}, rng)}; },
      [](Tape& t, const std::vector<Var>& in) { return reduce_mean(t, relu(t, in[0])); }));
  cases.push_back(pointwise_case("softplus", single(-3.0, 3.0),
                                 [](Tape& t, const std::vector<Var>& in) {
                                   return reduce_mean(t, softplus(t, in[0]));
                                 }));
  cases.push_back(pointwise_case(
      "bias_add",
      [](Rng& rng) {
        return std::vector<Tensor>{Tensor::uniform({2, 3, 3}, rng, -1.0, 1.0),
                                   Tensor::uniform({2}, rng, -1.0, 1.0)};
      },
      [](Tape& t, const std::vector<Var>& in) {
        return reduce_mean(t, bias_add(t, in[0], in[1]));
      }));
  cases.push_back(pointwise_case("reshape", single(-1.5, 1.5),
                                 [](Tape& t, const std::vector<Var>& in) {
                                   return reduce_mean(t, reshape(t, in[0], {3, 2}));
                                 }));
  cases.push_back(pointwise_case(
      "stack",
      [](Rng& rng) {
        return std::vector<Tensor>{Tensor::uniform({2, 2}, rng, -1.0, 1.0),
                                   Tensor::uniform({2, 2}, rng, -1.0, 1.0),
                                   Tensor::uniform({2, 2}, rng, -1.0, 1.0)};
      },
      [](Tape& t, const std::vector<Var>& in) {
        return reduce_mean(t, stack(t, {in[0], in[1], in[2]}));
      }));
  cases.push_back(pointwise_case(
      "upsample_bilinear",
      [](Rng& rng) {
        return std::vector<Tensor>{Tensor::uniform({1, 3, 3}, rng, -1.0, 1.0)};
      },
      [](Tape& t, const std::vector<Var>& in) {
        return reduce_mean(t, upsample_bilinear(t, in[0], 5, 7));
      }));
  cases.push_back(pointwise_case(
      "reduce_sum",
      [](Rng& rng) {
        return std::vector<Tensor>{Tensor::uniform({2, 3, 2}, rng, -1.0, 1.0)};
      },
      [](Tape& t, const std::vector<Var>& in) {
        return reduce_mean(t, reduce_sum(t, in[0], {0, 2}));
      }));
  cases.push_back(pointwise_case(
      "reduce_mean",
      [](Rng& rng) {
        return std::vector<Tensor>{Tensor::uniform({2, 3, 2}, rng, -1.0, 1.0)};
      },
      [](Tape& t, const std::vector<Var>& in) {
        return reduce_mean(t, reduce_mean(t, in[0], {1}));
      }));
  cases.push_back(pointwise_case(
      "reduce_max",
      [](Rng& rng) { return std::vector<Tensor>{detied({2, 3, 2}, rng)}; },
      [](Tape& t, const std::vector<Var>& in) {
        return reduce_mean(t, reduce_max(t, in[0], {0, 2}));
      }));
  // Three conv geometries cycled across points: plain, strided, dilated.
  cases.push_back(
      {"conv2d", [](uint64_t seed) {
         double worst = 0.0;
         for (int p = 0; p < gradcheck_detail::kPoints; ++p) {
           Rng rng(mix_seed(seed, static_cast<uint64_t>(p)));
           std::vector<Tensor> in{Tensor::uniform({2, 5, 5}, rng, -1.0, 1.0),
                                  Tensor::uniform({3, 2, 3, 3}, rng, -1.0, 1.0)};
           const int stride = (p % 3 == 1) ? 2 : 1;
           const int dilation = (p % 3 == 2) ? 2 : 1;
           const int padding = (p % 3 == 2) ? 2 : 1;
           auto fn = [stride, dilation, padding](Tape& t, const std::vector<Var>& v) {
             return reduce_mean(t, conv2d(t, v[0], v[1], stride, dilation, padding));
           };
           worst = std::max(worst, finite_diff_check(fn, in));
         }
         return worst;
       }});
  cases.push_back(
      {"cross_entropy", [](uint64_t seed) {
         double worst = 0.0;
         for (int p = 0; p < gradcheck_detail::kPoints; ++p) {
           Rng rng(mix_seed(seed, static_cast<uint64_t>(p)));
           Tensor logits = Tensor::uniform({3, 2, 2}, rng, -1.5, 1.5);
           LabelMap labels(2, 2);
           for (int y = 0; y < 2; ++y)
             for (int x = 0; x < 2; ++x)
               labels.at(y, x) = static_cast<int>(rng.integer(4));  // 0 = ignored
           labels.at(0, 0) = 1;  // keep at least one scored pixel
           auto fn = [labels](Tape& t, const std::vector<Var>& v) {
             return cross_entropy_loss(t, v[0], labels).loss;
           };
           worst = std::max(worst, finite_diff_check(fn, {logits}));
         }
         return worst;
       }});
  cases.push_back(
      {"smooth_l1", [](uint64_t seed) {
         double worst = 0.0;
         for (int p = 0; p < gradcheck_detail::kPoints; ++p) {
           Rng rng(mix_seed(seed, static_cast<uint64_t>(p)));
           Tensor target = Tensor::uniform({2, 3}, rng, 0.5, 2.0);
           Tensor pred(target.shape());
           for (std::size_t i = 0; i < pred.size(); ++i) {
             // Residuals clear of the |r| = 1 seam, hitting both pieces.
             const double r = rng.coin() ? rng.uniform(-0.7, 0.7)
                                         : (rng.coin() ? 1.0 : -1.0) * rng.uniform(1.3, 2.0);
             pred[i] = target[i] + r;
           }
           auto fn = [target](Tape& t, const std::vector<Var>& v) {
             return smooth_l1_loss(t, v[0], target);
           };
           worst = std::max(worst, finite_diff_check(fn, {pred}));
         }
         return worst;
       }});
  cases.push_back(
      {"l2", [](uint64_t seed) {
         double worst = 0.0;
         for (int p = 0; p < gradcheck_detail::kPoints; ++p) {
           Rng rng(mix_seed(seed, static_cast<uint64_t>(p)));
           Tensor target = Tensor::uniform({2, 3}, rng, -1.0, 1.0);
           Tensor pred = Tensor::uniform({2, 3}, rng, -1.0, 1.0);
           auto fn = [target](Tape& t, const std::vector<Var>& v) {
             return l2_loss(t, v[0], target);
           };
           worst = std::max(worst, finite_diff_check(fn, {pred}));
         }
         return worst;
       }});
  cases.push_back(
      {"scale_invariant", [](uint64_t seed) {
         double worst = 0.0;
         for (int p = 0; p < gradcheck_detail::kPoints; ++p) {
           Rng rng(mix_seed(seed, static_cast<uint64_t>(p)));
           Tensor target = Tensor::uniform({2, 3}, rng, 0.5, 2.0);
           Tensor pred = Tensor::uniform({2, 3}, rng, 0.5, 2.0);
           auto fn = [target](Tape& t, const std::vector<Var>& v) {
             return scale_invariant_loss(t, v[0], target, 0.5);
           };
           worst = std::max(worst, finite_diff_check(fn, {pred}));
         }
         return worst;
       }});
  cases.push_back(
      {"reconstruction_loss", [](uint64_t seed) {
         MvaeConfig cfg;
         cfg.feature_channels = 3;
         cfg.hidden_channels = 2;
         double worst = 0.0;
         for (int p = 0; p < gradcheck_detail::kPoints; ++p) {
           Rng rng(mix_seed(seed, static_cast<uint64_t>(p)));
           std::vector<Tensor> in{
               Tensor::uniform({3, 2, 2}, rng, -1.0, 1.0),  // x
               Tensor::uniform({3, 2, 2}, rng, -1.0, 1.0),  // d
               Tensor::uniform({2, 3, 1, 1}, rng, -0.8, 0.8),
               Tensor::uniform({2, 3, 1, 1}, rng, -0.8, 0.8),
               Tensor::uniform({3, 2, 1, 1}, rng, -0.8, 0.8),
               Tensor::uniform({3, 2, 1, 1}, rng, -0.8, 0.8),
               Tensor::uniform({2}, rng, -0.5, 0.5),
               Tensor::uniform({3}, rng, -0.5, 0.5),
               Tensor::uniform({3}, rng, -0.5, 0.5)};
           auto fn = [cfg](Tape& t, const std::vector<Var>& v) {
             MvaeVars mv{v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
             return reconstruction_loss(t, cfg, mv, v[0], v[1]);
           };
           worst = std::max(worst, finite_diff_check(fn, in));
         }
         return worst;
       }});
  cases.push_back(
      {"correlation", [](uint64_t seed) {
         double worst = 0.0;
         for (int p = 0; p < gradcheck_detail::kPoints; ++p) {
           Rng rng(mix_seed(seed, static_cast<uint64_t>(p)));
           std::vector<Tensor> in{Tensor::uniform({3, 2, 2, 2}, rng, -1.0, 1.0),
                                  Tensor::uniform({3, 2, 2, 2}, rng, -1.0, 1.0)};
           auto fn = [](Tape& t, const std::vector<Var>& v) {
             return correlation(t, v[0], v[1]);
           };
           worst = std::max(worst, finite_diff_check(fn, in));
         }
         return worst;
       }});
  return cases;
}

/// An op whose backward pass is wrong on purpose (forward 2x, backward claims
/// 3x). Exists so the checker's failure path can be demonstrated end to end.
inline Var faulty_scale(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 2.0 * xv[i];
  return t.record(std::move(y), {x}, [x](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    Tensor& gx = tt.adjoint_acc(x);
    for (std::size_t i = 0; i < adj.size(); ++i) gx[i] += 3.0 * adj[i];
  });
}

inline GradCase inject_fault_case() {
  return gradcheck_detail::pointwise_case(
      "faulty_scale",
      [](Rng& rng) {
        return std::vector<Tensor>{Tensor::uniform({2, 3}, rng, -1.0, 1.0)};
      },
      [](Tape& t, const std::vector<Var>& in) {
        return reduce_mean(t, faulty_scale(t, in[0]));
      });
}

}  // namespace crl
