#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "crl/nn.hpp"

// Two-view autoencoder over per-sample feature maps. Both views are projected
// into a shared hidden map by 1x1 convolutions, and the hidden map is decoded
// back into both views, so either view alone can stand in for the pair. The
// correlation objective pulls the two single-view encodings together.

namespace crl {

struct MvaeConfig {
  int feature_channels = 16;  // per-view channels entering the encoder
  int hidden_channels = 8;    // shared code channels
  Activation hidden_act = Activation::Tanh;
  Activation output_act = Activation::Identity;

  void validate() const {
    CRL_CHECK(feature_channels >= 1,
              "MvaeConfig: feature_channels must be >= 1, got " << feature_channels);
    CRL_CHECK(hidden_channels >= 1,
              "MvaeConfig: hidden_channels must be >= 1, got " << hidden_channels);
    CRL_CHECK(hidden_channels <= feature_channels,
              "MvaeConfig: hidden_channels " << hidden_channels
                                             << " exceeds feature_channels "
                                             << feature_channels);
    CRL_CHECK(hidden_act == Activation::Tanh || hidden_act == Activation::Sigmoid,
              "MvaeConfig: hidden activation must be tanh or sigmoid");
    CRL_CHECK(output_act == Activation::Identity || output_act == Activation::Tanh,
              "MvaeConfig: output activation must be identity or tanh");
  }
};

// w_* project a view down to the shared code, v_* reconstruct a view from it.
// The output bias is stored split per view.
template <class T>
struct MvaeParamsT {
  T w_x, w_d;      // [k,d,1,1]
  T v_x, v_d;      // [d,k,1,1]
  T b;             // [k]
  T b_r_x, b_r_d;  // [d]
};

using MvaeTensors = MvaeParamsT<Tensor>;
using MvaeVars = MvaeParamsT<Var>;

template <class T, class Fn>
void for_each_mvae_param(MvaeParamsT<T>& p, Fn&& fn) {
  fn("w_x", p.w_x);
  fn("w_d", p.w_d);
  fn("v_x", p.v_x);
  fn("v_d", p.v_d);
  fn("b", p.b);
  fn("b_r_x", p.b_r_x);
  fn("b_r_d", p.b_r_d);
}

template <class T, class Fn>
void for_each_mvae_param(const MvaeParamsT<T>& p, Fn&& fn) {
  fn("w_x", p.w_x);
  fn("w_d", p.w_d);
  fn("v_x", p.v_x);
  fn("v_d", p.v_d);
  fn("b", p.b);
  fn("b_r_x", p.b_r_x);
  fn("b_r_d", p.b_r_d);
}

inline MvaeTensors mvae_init(const MvaeConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = cfg.feature_channels;
  const int k = cfg.hidden_channels;
  const double lim_enc = std::sqrt(6.0 / d);
  const double lim_dec = std::sqrt(6.0 / k);
  MvaeTensors p;
  p.w_x = Tensor::uniform({k, d, 1, 1}, rng, -lim_enc, lim_enc);
  p.w_d = Tensor::uniform({k, d, 1, 1}, rng, -lim_enc, lim_enc);
  p.v_x = Tensor::uniform({d, k, 1, 1}, rng, -lim_dec, lim_dec);
  p.v_d = Tensor::uniform({d, k, 1, 1}, rng, -lim_dec, lim_dec);
  p.b = Tensor({k});
  p.b_r_x = Tensor({d});
  p.b_r_d = Tensor({d});
  return p;
}

inline MvaeVars lift(Tape& t, MvaeTensors& p, const std::string& prefix,
                     std::vector<BoundParam>* bindings) {
  auto one = [&](const char* name, Tensor& tensor) {
    Var var = t.leaf(tensor);
    if (bindings != nullptr) bindings->push_back({prefix + "." + name, &tensor, var});
    return var;
  };
  MvaeVars v;
  v.w_x = one("w_x", p.w_x);
  v.w_d = one("w_d", p.w_d);
  v.v_x = one("v_x", p.v_x);
  v.v_d = one("v_d", p.v_d);
  v.b = one("b", p.b);
  v.b_r_x = one("b_r_x", p.b_r_x);
  v.b_r_d = one("b_r_d", p.b_r_d);
  return v;
}

enum class ViewKind { Rgb, Depth };

inline Var encode_joint(Tape& t, const MvaeConfig& cfg, const MvaeVars& p, Var x, Var d) {
  Var mixed = add(t, conv2d(t, x, p.w_x), conv2d(t, d, p.w_d));
  return apply_activation(t, cfg.hidden_act, bias_add(t, mixed, p.b));
}

/// The absent view's projection term is omitted outright, which matches
/// encode_joint against a zero tensor bit for bit (a 1x1 conv of zeros is
/// exactly +0.0 everywhere and adding +0.0 is an identity on conv outputs).
inline Var encode_single(Tape& t, const MvaeConfig& cfg, const MvaeVars& p, Var view,
                         ViewKind which) {
  Var proj = conv2d(t, view, which == ViewKind::Rgb ? p.w_x : p.w_d);
  return apply_activation(t, cfg.hidden_act, bias_add(t, proj, p.b));
}

struct Decoded {
  Var x;
  Var d;
};

inline Decoded decode(Tape& t, const MvaeConfig& cfg, const MvaeVars& p, Var hidden) {
  Var rx = apply_activation(t, cfg.output_act,
                            bias_add(t, conv2d(t, hidden, p.v_x), p.b_r_x));
  Var rd = apply_activation(t, cfg.output_act,
                            bias_add(t, conv2d(t, hidden, p.v_d), p.b_r_d));
  return {rx, rd};
}

inline Var mse(Tape& t, Var pred, Var target) {
  Var r = sub(t, pred, target);
  return reduce_mean(t, mul(t, r, r));
}

/// Sum of three reconstruction terms: the joint encoding and each single-view
/// encoding must each rebuild BOTH views. Per term the two per-view mean
/// squared errors are averaged, so one term over a perfectly wrong unit-range
/// view contributes 0.5.
inline Var reconstruction_loss(Tape& t, const MvaeConfig& cfg, const MvaeVars& p, Var x,
                               Var d) {
  auto term = [&](Var hidden) {
    Decoded r = decode(t, cfg, p, hidden);
    return scale(t, add(t, mse(t, r.x, x), mse(t, r.d, d)), 0.5);
  };
  Var joint = term(encode_joint(t, cfg, p, x, d));
  Var rgb_only = term(encode_single(t, cfg, p, x, ViewKind::Rgb));
  Var depth_only = term(encode_single(t, cfg, p, d, ViewKind::Depth));
  return add(t, add(t, joint, rgb_only), depth_only);
}

// Coordinates whose batch variance is at or below this are skipped by the
// correlation objective; a correlation over noise-free constants is
// meaningless and its gradient blows up.
inline constexpr double kCorrVarianceEps = 1e-8;

/// Mean over coordinates of the batchwise Pearson correlation between two
/// stacked hidden maps [B,...]. Degenerate coordinates are dropped from the
/// mean; if every coordinate is degenerate the value is defined as 0.
inline Var correlation(Tape& t, Var hx, Var hd) {
  const Tensor& a = t.value(hx);
  const Tensor& b = t.value(hd);
  CRL_CHECK(a.same_shape(b), "correlation: shapes differ, "
                                 << shape_string(a.shape()) << " vs "
                                 << shape_string(b.shape()));
  CRL_CHECK(a.rank() >= 2, "correlation: need a batch axis plus coordinates, got rank "
                               << a.rank());
  const int batch = a.extent(0);
  CRL_CHECK(batch >= 2, "correlation: batch size must be >= 2, got " << batch);
  const std::size_t coords = a.size() / static_cast<std::size_t>(batch);

  struct CoordStat {
    bool used = false;
    double mean_a = 0.0, mean_b = 0.0;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
  };
  std::vector<CoordStat> stats(coords);
  double sum_r = 0.0;
  long used = 0;
  for (std::size_t c = 0; c < coords; ++c) {
    CoordStat& s = stats[c];
    for (int i = 0; i < batch; ++i) {
      s.mean_a += a[static_cast<std::size_t>(i) * coords + c];
      s.mean_b += b[static_cast<std::size_t>(i) * coords + c];
    }
    s.mean_a /= batch;
    s.mean_b /= batch;
    for (int i = 0; i < batch; ++i) {
      const double da = a[static_cast<std::size_t>(i) * coords + c] - s.mean_a;
      const double db = b[static_cast<std::size_t>(i) * coords + c] - s.mean_b;
      s.saa += da * da;
      s.sbb += db * db;
      s.sab += da * db;
    }
    if (s.saa / batch <= kCorrVarianceEps || s.sbb / batch <= kCorrVarianceEps) continue;
    s.used = true;
    sum_r += s.sab / std::sqrt(s.saa * s.sbb);
    ++used;
  }
  Tensor out = Tensor::scalar(used > 0 ? sum_r / used : 0.0);
  return t.record(
      std::move(out), {hx, hd},
      [hx, hd, stats = std::move(stats), batch, coords, used](Tape& tt, Var self) {
        if (used == 0) return;
        const double w = tt.adjoint_of(self).item() / used;
        const Tensor& av = tt.value(hx);
        const Tensor& bv = tt.value(hd);
        Tensor& ga = tt.adjoint_acc(hx);
        Tensor& gb = tt.adjoint_acc(hd);
        for (std::size_t c = 0; c < coords; ++c) {
          const CoordStat& s = stats[c];
          if (!s.used) continue;
          const double inv_den = 1.0 / std::sqrt(s.saa * s.sbb);
          const double ka = s.sab / s.saa;
          const double kb = s.sab / s.sbb;
          for (int i = 0; i < batch; ++i) {
            const std::size_t at = static_cast<std::size_t>(i) * coords + c;
            const double da = av[at] - s.mean_a;
            const double db = bv[at] - s.mean_b;
            ga[at] += w * (db - ka * da) * inv_den;
            gb[at] += w * (da - kb * db) * inv_den;
          }
        }
      });
}

}  // namespace crl
