#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "crl/labels.hpp"
#include "crl/tensor.hpp"

namespace crl {

/// KxK confusion counts over classes 1..K; ground-truth 0 pixels are skipped.
/// Merging is associative, so per-image matrices can be accumulated in any
/// grouping.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes)
      : k_(classes), cells_(static_cast<std::size_t>(classes) * classes, 0) {
    CRL_CHECK(classes >= 1, "ConfusionMatrix: needs at least one class, got " << classes);
  }

  void add_pixel(int gt, int pred) {
    if (gt == 0) return;
    CRL_CHECK(gt >= 1 && gt <= k_, "ConfusionMatrix: ground-truth class " << gt
                                       << " outside 1.." << k_);
    CRL_CHECK(pred >= 1 && pred <= k_, "ConfusionMatrix: predicted class " << pred
                                           << " outside 1.." << k_);
    ++cells_[static_cast<std::size_t>(gt - 1) * k_ + (pred - 1)];
  }

  void add(const LabelMap& gt, const LabelMap& pred) {
    CRL_CHECK(gt.same_shape(pred), "ConfusionMatrix::add: " << gt.height << "x" << gt.width
                                       << " vs " << pred.height << "x" << pred.width);
    for (std::size_t i = 0; i < gt.size(); ++i) add_pixel(gt.v[i], pred.v[i]);
  }

  void merge(const ConfusionMatrix& o) {
    CRL_CHECK(o.k_ == k_, "ConfusionMatrix::merge: " << o.k_ << " classes vs " << k_);
    for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i] += o.cells_[i];
  }

  /// Count of ground-truth class gt predicted as pred (both 1-based).
  std::uint64_t at(int gt, int pred) const {
    CRL_CHECK(gt >= 1 && gt <= k_ && pred >= 1 && pred <= k_,
              "ConfusionMatrix::at: (" << gt << "," << pred << ") outside 1.." << k_);
    return cells_[static_cast<std::size_t>(gt - 1) * k_ + (pred - 1)];
  }

  int classes() const { return k_; }

  std::uint64_t scored() const {
    std::uint64_t s = 0;
    for (std::uint64_t c : cells_) s += c;
    return s;
  }

 private:
  int k_;
  std::vector<std::uint64_t> cells_;
};

/// Per-class intersection-over-union. A class with an empty union (never in
/// the ground truth nor predicted on scored pixels) is absent: excluded from
/// the mean and reported as NaN.
struct IouReport {
  std::vector<double> per_class;  // index c -> class c+1; NaN if absent
  std::vector<bool> present;
  double mean = 0.0;
  int present_count = 0;
};

inline IouReport iou(const ConfusionMatrix& cm) {
  const int k = cm.classes();
  CRL_CHECK(cm.scored() > 0, "iou: confusion matrix holds no scored pixels");
  IouReport r;
  r.per_class.assign(static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
  r.present.assign(static_cast<std::size_t>(k), false);
  double sum = 0.0;
  for (int c = 1; c <= k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 1; j <= k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t inter = cm.at(c, c);
    const std::uint64_t uni = row + col - inter;
    if (uni == 0) continue;
    const double v = static_cast<double>(inter) / static_cast<double>(uni);
    r.per_class[static_cast<std::size_t>(c - 1)] = v;
    r.present[static_cast<std::size_t>(c - 1)] = true;
    sum += v;
    ++r.present_count;
  }
  r.mean = sum / static_cast<double>(r.present_count);
  return r;
}

/// Root-mean-square error over included pixels (mask 0 excludes, like the
/// loss convention). Streams across images via RmseAccumulator.
struct RmseAccumulator {
  double sq_sum = 0.0;
  std::uint64_t n = 0;

  void add(const Tensor& pred, const Tensor& target, const LabelMap* mask = nullptr) {
    CRL_CHECK(pred.same_shape(target), "rmse: prediction shape "
                                           << shape_string(pred.shape()) << " vs target "
                                           << shape_string(target.shape()));
    if (mask != nullptr)
      CRL_CHECK(mask->size() == pred.size(), "rmse: mask holds " << mask->size()
                                                 << " pixels, map " << pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (mask != nullptr && mask->v[i] == 0) continue;
      const double r = pred[i] - target[i];
      sq_sum += r * r;
      ++n;
    }
  }

  double value() const {
    CRL_CHECK(n > 0, "rmse: no included pixels");
    return std::sqrt(sq_sum / static_cast<double>(n));
  }
};

inline double rmse(const Tensor& pred, const Tensor& target, const LabelMap* mask = nullptr) {
  RmseAccumulator acc;
  acc.add(pred, target, mask);
  return acc.value();
}

/// Collapses [K,H,W] logits to a label map over classes 1..K.
/// Ties go to the lowest class index, deterministically.
inline LabelMap argmax_labels(const Tensor& logits) {
  CRL_CHECK(logits.rank() == 3, "argmax_labels: logits must be rank 3 [K,H,W], got "
                                    << shape_string(logits.shape()));
  const int K = logits.extent(0), H = logits.extent(1), W = logits.extent(2);
  LabelMap out(H, W, 1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int best = 0;
      double bv = logits(0, y, x);
      for (int c = 1; c < K; ++c) {
        const double v = logits(c, y, x);
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out.at(y, x) = best + 1;
    }
  return out;
}

}  // namespace crl
