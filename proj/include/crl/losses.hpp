#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "crl/labels.hpp"
#include "crl/ops.hpp"

// Task losses, each fused into a single tape op. Conventions shared by all:
// per-pixel means, label 0 marks pixels to ignore, logits channel c scores
// class c+1.

namespace crl {

namespace loss_detail {

inline void check_depth_args(const char* op, const Tensor& pred, const Tensor& target,
                             const LabelMap* mask) {
  CRL_CHECK(pred.same_shape(target), op << ": prediction shape "
                                         << shape_string(pred.shape()) << " vs target "
                                         << shape_string(target.shape()));
  if (mask != nullptr) {
    CRL_CHECK(pred.rank() == 2, op << ": masked input must be rank 2 [H,W], got "
                                   << shape_string(pred.shape()));
    CRL_CHECK(mask->height == pred.extent(0) && mask->width == pred.extent(1),
              op << ": mask " << mask->height << "x" << mask->width << " vs map "
                 << pred.extent(0) << "x" << pred.extent(1));
  }
}

// Included-pixel indicator; mask==nullptr keeps everything.
inline bool included(const LabelMap* mask, std::size_t i) {
  return mask == nullptr || mask->v[i] != 0;
}

}  // namespace loss_detail

/// Mean negative log-likelihood over non-ignored pixels.
/// logits [K,H,W], labels in {0..K} with 0 ignored. All pixels ignored is
/// defined as loss 0; the all_ignored() flag lets callers warn.
struct CrossEntropyResult {
  Var loss;
  long scored = 0;
  bool all_ignored() const { return scored == 0; }
};

inline CrossEntropyResult cross_entropy_loss(Tape& t, Var logits, const LabelMap& labels) {
  const Tensor& lv = t.value(logits);
  CRL_CHECK(lv.rank() == 3, "cross_entropy_loss: logits must be rank 3 [K,H,W], got "
                                << shape_string(lv.shape()));
  const int K = lv.extent(0), H = lv.extent(1), W = lv.extent(2);
  CRL_CHECK(labels.height == H && labels.width == W,
            "cross_entropy_loss: labels " << labels.height << "x" << labels.width
                                          << " vs logits " << H << "x" << W);
  long n = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int c = labels.at(y, x);
      CRL_CHECK(c >= 0 && c <= K, "cross_entropy_loss: label " << c << " at pixel ("
                                      << y << "," << x << ") outside {0.." << K << "}");
      if (c != 0) ++n;
    }
  if (n == 0) return {t.leaf(Tensor::scalar(0.0)), 0};

  double total = 0.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int cls = labels.at(y, x);
      if (cls == 0) continue;
      double m = lv(0, y, x);
      for (int c = 1; c < K; ++c) m = std::max(m, lv(c, y, x));
      double s = 0.0;
      for (int c = 0; c < K; ++c) s += std::exp(lv(c, y, x) - m);
      total += m + std::log(s) - lv(cls - 1, y, x);
    }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));

  Var loss = t.record(std::move(out), {logits},
                      [logits, labels, n, K, H, W](Tape& tt, Var self) {
                        const double a = tt.adjoint_of(self)[0] / static_cast<double>(n);
                        const Tensor& l = tt.value(logits);
                        Tensor& g = tt.adjoint_acc(logits);
                        std::vector<double> p(static_cast<std::size_t>(K));
                        for (int y = 0; y < H; ++y)
                          for (int x = 0; x < W; ++x) {
                            const int cls = labels.at(y, x);
                            if (cls == 0) continue;
                            double m = l(0, y, x);
                            for (int c = 1; c < K; ++c) m = std::max(m, l(c, y, x));
                            double s = 0.0;
                            for (int c = 0; c < K; ++c) {
                              p[static_cast<std::size_t>(c)] = std::exp(l(c, y, x) - m);
                              s += p[static_cast<std::size_t>(c)];
                            }
                            for (int c = 0; c < K; ++c) {
                              double soft = p[static_cast<std::size_t>(c)] / s;
                              g(c, y, x) += a * (soft - (c == cls - 1 ? 1.0 : 0.0));
                            }
                          }
                      });
  return {loss, n};
}

/// Huber-style robust depth loss: mean of D(pred - target) over included
/// pixels, D(r) = r^2/2 for |r| < 1 and |r| - 1/2 otherwise.
inline Var smooth_l1_loss(Tape& t, Var pred, Tensor target, const LabelMap* mask = nullptr) {
  const Tensor& pv = t.value(pred);
  loss_detail::check_depth_args("smooth_l1_loss", pv, target, mask);
  long n = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!loss_detail::included(mask, i)) continue;
    ++n;
    const double r = pv[i] - target[i];
    total += std::abs(r) < 1.0 ? 0.5 * r * r : std::abs(r) - 0.5;
  }
  if (n == 0) return t.leaf(Tensor::scalar(0.0));
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  LabelMap mask_copy = mask ? *mask : LabelMap();
  const bool masked = mask != nullptr;
  return t.record(std::move(out), {pred},
                  [pred, target = std::move(target), mask_copy = std::move(mask_copy),
                   masked, n](Tape& tt, Var self) {
                    const double a = tt.adjoint_of(self)[0] / static_cast<double>(n);
                    const Tensor& pv2 = tt.value(pred);
                    Tensor& g = tt.adjoint_acc(pred);
                    const LabelMap* m = masked ? &mask_copy : nullptr;
                    for (std::size_t i = 0; i < pv2.size(); ++i) {
                      if (!loss_detail::included(m, i)) continue;
                      const double r = pv2[i] - target[i];
                      g[i] += a * (std::abs(r) < 1.0 ? r : (r > 0.0 ? 1.0 : -1.0));
                    }
                  });
}

/// Mean squared error over included pixels.
inline Var l2_loss(Tape& t, Var pred, Tensor target, const LabelMap* mask = nullptr) {
  const Tensor& pv = t.value(pred);
  loss_detail::check_depth_args("l2_loss", pv, target, mask);
  long n = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!loss_detail::included(mask, i)) continue;
    ++n;
    const double r = pv[i] - target[i];
    total += r * r;
  }
  if (n == 0) return t.leaf(Tensor::scalar(0.0));
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  LabelMap mask_copy = mask ? *mask : LabelMap();
  const bool masked = mask != nullptr;
  return t.record(std::move(out), {pred},
                  [pred, target = std::move(target), mask_copy = std::move(mask_copy),
                   masked, n](Tape& tt, Var self) {
                    const double a = tt.adjoint_of(self)[0] / static_cast<double>(n);
                    const Tensor& pv2 = tt.value(pred);
                    Tensor& g = tt.adjoint_acc(pred);
                    const LabelMap* m = masked ? &mask_copy : nullptr;
                    for (std::size_t i = 0; i < pv2.size(); ++i) {
                      if (!loss_detail::included(m, i)) continue;
                      g[i] += a * 2.0 * (pv2[i] - target[i]);
                    }
                  });
}

/// Log-space depth loss insensitive (at lambda_si=1) to global scaling:
/// mean(e^2) - lambda_si * mean(e)^2 with e = log(pred) - log(target).
/// Requires strictly positive maps on included pixels.
inline Var scale_invariant_loss(Tape& t, Var pred, Tensor target, double lambda_si = 0.5,
                                const LabelMap* mask = nullptr) {
  const Tensor& pv = t.value(pred);
  loss_detail::check_depth_args("scale_invariant_loss", pv, target, mask);
  long n = 0;
  double sum_e = 0.0, sum_e2 = 0.0;
  const int W = pv.rank() == 2 ? pv.extent(1) : 1;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!loss_detail::included(mask, i)) continue;
    CRL_CHECK(pv[i] > 0.0 && target[i] > 0.0,
              "scale_invariant_loss: non-positive value at pixel ("
                  << static_cast<long>(i) / W << "," << static_cast<long>(i) % W
                  << "): pred " << pv[i] << ", target " << target[i]);
    ++n;
    const double e = std::log(pv[i]) - std::log(target[i]);
    sum_e += e;
    sum_e2 += e * e;
  }
  if (n == 0) return t.leaf(Tensor::scalar(0.0));
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor out = Tensor::scalar(sum_e2 * inv_n - lambda_si * (sum_e * inv_n) * (sum_e * inv_n));
  LabelMap mask_copy = mask ? *mask : LabelMap();
  const bool masked = mask != nullptr;
  return t.record(std::move(out), {pred},
                  [pred, target = std::move(target), mask_copy = std::move(mask_copy),
                   masked, n, lambda_si, mean_e = sum_e * inv_n](Tape& tt, Var self) {
                    const double a = tt.adjoint_of(self)[0];
                    const double inv = 1.0 / static_cast<double>(n);
                    const Tensor& pv2 = tt.value(pred);
                    Tensor& g = tt.adjoint_acc(pred);
                    const LabelMap* m = masked ? &mask_copy : nullptr;
                    for (std::size_t i = 0; i < pv2.size(); ++i) {
                      if (!loss_detail::included(m, i)) continue;
                      const double e = std::log(pv2[i]) - std::log(target[i]);
                      g[i] += a * 2.0 * inv * (e - lambda_si * mean_e) / pv2[i];
                    }
                  });
}

// ---------------------------------------------------------------------------
// Combined objective

struct LossWeights {
  double lambda_rec = 1.0;   // reconstruction term weight
  double lambda_corr = 0.0;  // correlation bonus weight (off by default)
  double lambda_si = 0.5;    // variance discount inside the scale-invariant loss
};

/// total = (l_ss_rgb + l_d) + lambda_rec * l_rec - lambda_corr * corr.
/// The corr handle may be invalid (or the weight zero) to drop the bonus.
/// Must stay in lockstep with total_objective_value below: the logged total
/// is re-derivable from the logged components bit-for-bit.
inline Var total_objective(Tape& t, Var l_ss_rgb, Var l_d, Var l_rec, Var corr,
                           const LossWeights& w) {
  Var total = add(t, add(t, l_ss_rgb, l_d), scale(t, l_rec, w.lambda_rec));
  if (corr.valid() && w.lambda_corr != 0.0)
    total = sub(t, total, scale(t, corr, w.lambda_corr));
  return total;
}

inline double total_objective_value(double l_ss_rgb, double l_d, double l_rec, double corr,
                                    const LossWeights& w) {
  double total = (l_ss_rgb + l_d) + (w.lambda_rec * l_rec);
  if (w.lambda_corr != 0.0) total = total - (w.lambda_corr * corr);
  return total;
}

}  // namespace crl
