#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "crl/tape.hpp"

// Differentiable ops. Every op validates shapes up front (errors name the
// offending dimension), computes forward in double, and records a backward
// rule that adds into the inputs' adjoint accumulators. Accumulation order is
// fixed, so repeated runs are bit-identical.

namespace crl {

namespace op_detail {

inline int floor_div(int a, int b) {
  int q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

inline int ceil_div(int a, int b) { return -floor_div(-a, b); }

// Valid output range [lo, hi] for one kernel tap: positions where
// o*stride - padding + tap*dilation lands inside [0, extent).
inline std::pair<int, int> tap_range(int out_extent, int in_extent, int stride,
                                     int padding, int tap_offset) {
  int lo = std::max(0, ceil_div(padding - tap_offset, stride));
  int hi = std::min(out_extent - 1, floor_div(in_extent - 1 + padding - tap_offset, stride));
  return {lo, hi};
}

}  // namespace op_detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  CRL_CHECK(av.same_shape(bv), "add: shape " << shape_string(av.shape())
                                             << " vs " << shape_string(bv.shape()));
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    Tensor& ga = tt.adjoint_acc(a);
    Tensor& gb = tt.adjoint_acc(b);
    for (std::size_t i = 0; i < adj.size(); ++i) {
      ga[i] += adj[i];
      gb[i] += adj[i];
    }
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  CRL_CHECK(av.same_shape(bv), "sub: shape " << shape_string(av.shape())
                                             << " vs " << shape_string(bv.shape()));
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    Tensor& ga = tt.adjoint_acc(a);
    Tensor& gb = tt.adjoint_acc(b);
    for (std::size_t i = 0; i < adj.size(); ++i) {
      ga[i] += adj[i];
      gb[i] -= adj[i];
    }
  });
}

inline Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  CRL_CHECK(av.same_shape(bv), "mul: shape " << shape_string(av.shape())
                                             << " vs " << shape_string(bv.shape()));
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return t.record(std::move(y), {a, b}, [a, b](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    const Tensor& av2 = tt.value(a);
    const Tensor& bv2 = tt.value(b);
    Tensor& ga = tt.adjoint_acc(a);
    Tensor& gb = tt.adjoint_acc(b);
    for (std::size_t i = 0; i < adj.size(); ++i) {
      ga[i] += adj[i] * bv2[i];
      gb[i] += adj[i] * av2[i];
    }
  });
}

/// Multiplication by a compile-time-known constant.
inline Var scale(Tape& t, Var x, double c) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = c * xv[i];
  return t.record(std::move(y), {x}, [x, c](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    Tensor& gx = tt.adjoint_acc(x);
    for (std::size_t i = 0; i < adj.size(); ++i) gx[i] += c * adj[i];
  });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

namespace op_detail {

inline double sigmoid_val(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_val(double x) {
  // max(x,0) + log1p(exp(-|x|)): overflow-safe for large |x|
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace op_detail

inline Var tanh(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(xv[i]);
  return t.record(std::move(y), {x}, [x](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    const Tensor& yv = tt.value(self);
    Tensor& gx = tt.adjoint_acc(x);
    for (std::size_t i = 0; i < adj.size(); ++i) gx[i] += adj[i] * (1.0 - yv[i] * yv[i]);
  });
}

inline Var sigmoid(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = op_detail::sigmoid_val(xv[i]);
  return t.record(std::move(y), {x}, [x](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    const Tensor& yv = tt.value(self);
    Tensor& gx = tt.adjoint_acc(x);
    for (std::size_t i = 0; i < adj.size(); ++i) gx[i] += adj[i] * yv[i] * (1.0 - yv[i]);
  });
}

inline Var relu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return t.record(std::move(y), {x}, [x](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    const Tensor& xv2 = tt.value(x);
    Tensor& gx = tt.adjoint_acc(x);
    // subgradient at 0 is taken as 0
    for (std::size_t i = 0; i < adj.size(); ++i)
      if (xv2[i] > 0.0) gx[i] += adj[i];
  });
}

inline Var softplus(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = op_detail::softplus_val(xv[i]);
  return t.record(std::move(y), {x}, [x](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    const Tensor& xv2 = tt.value(x);
    Tensor& gx = tt.adjoint_acc(x);
    for (std::size_t i = 0; i < adj.size(); ++i)
      gx[i] += adj[i] * op_detail::sigmoid_val(xv2[i]);
  });
}

// ---------------------------------------------------------------------------
// Shape plumbing

inline Var reshape(Tape& t, Var x, std::vector<int> new_shape) {
  const Tensor& xv = t.value(x);
  Tensor y(std::move(new_shape));
  CRL_CHECK(y.size() == xv.size(),
            "reshape: " << shape_string(xv.shape()) << " holds " << xv.size()
                        << " elements, target " << shape_string(y.shape())
                        << " holds " << y.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i];
  return t.record(std::move(y), {x}, [x](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    Tensor& gx = tt.adjoint_acc(x);
    for (std::size_t i = 0; i < adj.size(); ++i) gx[i] += adj[i];
  });
}

/// Joins equal-shape tensors along a fresh leading axis: N of [S...] -> [N,S...].
inline Var stack(Tape& t, const std::vector<Var>& parts) {
  CRL_CHECK(!parts.empty(), "stack: no inputs");
  const Tensor& first = t.value(parts[0]);
  std::vector<int> out_shape;
  out_shape.reserve(first.rank() + 1);
  out_shape.push_back(static_cast<int>(parts.size()));
  for (int a = 0; a < first.rank(); ++a) out_shape.push_back(first.extent(a));
  Tensor y(std::move(out_shape));
  const std::size_t step = first.size();
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = t.value(parts[p]);
    CRL_CHECK(v.same_shape(first), "stack: input " << p << " has shape "
                                                   << shape_string(v.shape())
                                                   << ", expected "
                                                   << shape_string(first.shape()));
    for (std::size_t i = 0; i < step; ++i) y[p * step + i] = v[i];
  }
  return t.record(std::move(y), parts, [parts, step](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    for (std::size_t p = 0; p < parts.size(); ++p) {
      Tensor& g = tt.adjoint_acc(parts[p]);
      for (std::size_t i = 0; i < step; ++i) g[i] += adj[p * step + i];
    }
  });
}

/// Adds a per-channel bias vector [C] onto a [C,H,W] map.
inline Var bias_add(Tape& t, Var x, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(b);
  CRL_CHECK(xv.rank() == 3, "bias_add: map must be rank 3 [C,H,W], got "
                                << shape_string(xv.shape()));
  CRL_CHECK(bv.rank() == 1, "bias_add: bias must be rank 1 [C], got "
                                << shape_string(bv.shape()));
  CRL_CHECK(bv.extent(0) == xv.extent(0),
            "bias_add: bias has " << bv.extent(0) << " channels, map has "
                                  << xv.extent(0));
  const int C = xv.extent(0);
  const std::size_t hw = xv.size() / static_cast<std::size_t>(C);
  Tensor y(xv.shape());
  for (int c = 0; c < C; ++c) {
    const double bc = bv[static_cast<std::size_t>(c)];
    const std::size_t base = static_cast<std::size_t>(c) * hw;
    for (std::size_t i = 0; i < hw; ++i) y[base + i] = xv[base + i] + bc;
  }
  return t.record(std::move(y), {x, b}, [x, b, C, hw](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    Tensor& gx = tt.adjoint_acc(x);
    Tensor& gb = tt.adjoint_acc(b);
    for (std::size_t i = 0; i < adj.size(); ++i) gx[i] += adj[i];
    for (int c = 0; c < C; ++c) {
      const std::size_t base = static_cast<std::size_t>(c) * hw;
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += adj[base + i];
      gb[static_cast<std::size_t>(c)] += s;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

enum class ReduceKind { Sum, Mean, Max };

namespace op_detail {

struct ReducePlan {
  std::vector<std::size_t> in_stride;   // row-major strides of the input
  std::vector<std::size_t> out_stride;  // contribution of each input axis (0 if reduced)
  std::vector<int> out_shape;
  std::size_t reduced_count = 1;  // elements folded into each output cell

  std::size_t out_index(std::size_t linear) const {
    std::size_t oi = 0;
    for (std::size_t ax = 0; ax < in_stride.size(); ++ax) {
      std::size_t idx = linear / in_stride[ax];
      linear %= in_stride[ax];
      oi += idx * out_stride[ax];
    }
    return oi;
  }
};

inline ReducePlan make_reduce_plan(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  std::vector<char> reduced(static_cast<std::size_t>(r), 0);
  for (int a : axes) {
    CRL_CHECK(a >= 0 && a < r,
              "reduce: axis " << a << " out of range for rank " << r);
    CRL_CHECK(!reduced[static_cast<std::size_t>(a)], "reduce: duplicate axis " << a);
    reduced[static_cast<std::size_t>(a)] = 1;
  }
  ReducePlan plan;
  plan.in_stride.assign(static_cast<std::size_t>(r), 1);
  for (int a = r - 2; a >= 0; --a)
    plan.in_stride[static_cast<std::size_t>(a)] =
        plan.in_stride[static_cast<std::size_t>(a + 1)] *
        static_cast<std::size_t>(x.extent(a + 1));
  plan.out_stride.assign(static_cast<std::size_t>(r), 0);
  std::size_t run = 1;
  for (int a = r - 1; a >= 0; --a) {
    if (reduced[static_cast<std::size_t>(a)]) {
      plan.reduced_count *= static_cast<std::size_t>(x.extent(a));
    } else {
      plan.out_stride[static_cast<std::size_t>(a)] = run;
      run *= static_cast<std::size_t>(x.extent(a));
    }
  }
  for (int a = 0; a < r; ++a)
    if (!reduced[static_cast<std::size_t>(a)]) plan.out_shape.push_back(x.extent(a));
  return plan;
}

}  // namespace op_detail

/// Reduces over the given axes, which are removed from the shape. Max routes
/// its gradient to the first maximum in row-major order. The axis list must
/// be non-empty; use the axis-free wrappers below for full reductions.
inline Var reduce(Tape& t, ReduceKind kind, Var x, const std::vector<int>& axes) {
  CRL_CHECK(!axes.empty(), "reduce: empty axis list");
  const Tensor& xv = t.value(x);
  op_detail::ReducePlan plan = op_detail::make_reduce_plan(xv, axes);
  Tensor y(plan.out_shape);
  if (kind == ReduceKind::Max) {
    std::vector<std::size_t> winner(y.size(), 0);
    y.fill(-std::numeric_limits<double>::infinity());
    for (std::size_t li = 0; li < xv.size(); ++li) {
      std::size_t oi = plan.out_index(li);
      if (xv[li] > y[oi]) {
        y[oi] = xv[li];
        winner[oi] = li;
      }
    }
    return t.record(std::move(y), {x},
                    [x, winner = std::move(winner)](Tape& tt, Var self) {
                      const Tensor& adj = tt.adjoint_of(self);
                      Tensor& gx = tt.adjoint_acc(x);
                      for (std::size_t oi = 0; oi < adj.size(); ++oi)
                        gx[winner[oi]] += adj[oi];
                    });
  }
  for (std::size_t li = 0; li < xv.size(); ++li) y[plan.out_index(li)] += xv[li];
  double w = 1.0;
  if (kind == ReduceKind::Mean) {
    w = 1.0 / static_cast<double>(plan.reduced_count);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= w;
  }
  return t.record(std::move(y), {x}, [x, plan = std::move(plan), w](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    Tensor& gx = tt.adjoint_acc(x);
    for (std::size_t li = 0; li < gx.size(); ++li)
      gx[li] += w * adj[plan.out_index(li)];
  });
}

namespace op_detail {

inline std::vector<int> all_axes(const Tensor& x) {
  std::vector<int> axes(static_cast<std::size_t>(x.rank()));
  for (int a = 0; a < x.rank(); ++a) axes[static_cast<std::size_t>(a)] = a;
  return axes;
}

}  // namespace op_detail

/// Full reduction to a rank-0 scalar. A rank-0 input passes through (with a
/// gradient path), since there is no axis left to fold.
inline Var reduce_full(Tape& t, ReduceKind kind, Var x) {
  if (t.value(x).rank() == 0) return reshape(t, x, {});
  return reduce(t, kind, x, op_detail::all_axes(t.value(x)));
}

inline Var reduce_sum(Tape& t, Var x) { return reduce_full(t, ReduceKind::Sum, x); }
inline Var reduce_mean(Tape& t, Var x) { return reduce_full(t, ReduceKind::Mean, x); }
inline Var reduce_max(Tape& t, Var x) { return reduce_full(t, ReduceKind::Max, x); }
inline Var reduce_sum(Tape& t, Var x, const std::vector<int>& axes) {
  return reduce(t, ReduceKind::Sum, x, axes);
}
inline Var reduce_mean(Tape& t, Var x, const std::vector<int>& axes) {
  return reduce(t, ReduceKind::Mean, x, axes);
}
inline Var reduce_max(Tape& t, Var x, const std::vector<int>& axes) {
  return reduce(t, ReduceKind::Max, x, axes);
}

// ---------------------------------------------------------------------------
// Convolution

namespace op_detail {

struct ConvDims {
  int C, H, W;      // input
  int O, KH, KW;    // kernel
  int HO, WO;       // output
  int stride, dilation, padding;
};

inline ConvDims conv_dims(const Tensor& in, const Tensor& ker, int stride,
                          int dilation, int padding) {
  CRL_CHECK(in.rank() == 3,
            "conv2d: input must be rank 3 [C,H,W], got " << shape_string(in.shape()));
  CRL_CHECK(ker.rank() == 4, "conv2d: kernel must be rank 4 [O,C,kh,kw], got "
                                 << shape_string(ker.shape()));
  CRL_CHECK(stride >= 1, "conv2d: stride " << stride << " must be >= 1");
  CRL_CHECK(dilation >= 1, "conv2d: dilation " << dilation << " must be >= 1");
  CRL_CHECK(padding >= 0, "conv2d: padding " << padding << " must be >= 0");
  ConvDims d;
  d.C = in.extent(0);
  d.H = in.extent(1);
  d.W = in.extent(2);
  d.O = ker.extent(0);
  d.KH = ker.extent(2);
  d.KW = ker.extent(3);
  CRL_CHECK(ker.extent(1) == d.C, "conv2d: kernel expects " << ker.extent(1)
                                      << " input channels, input has " << d.C);
  d.stride = stride;
  d.dilation = dilation;
  d.padding = padding;
  d.HO = (d.H + 2 * padding - dilation * (d.KH - 1) - 1) / stride + 1;
  d.WO = (d.W + 2 * padding - dilation * (d.KW - 1) - 1) / stride + 1;
  CRL_CHECK(d.H + 2 * padding >= dilation * (d.KH - 1) + 1 && d.HO >= 1,
            "conv2d: output height would be empty (input height "
                << d.H << ", kernel " << d.KH << ", dilation " << dilation
                << ", padding " << padding << ")");
  CRL_CHECK(d.W + 2 * padding >= dilation * (d.KW - 1) + 1 && d.WO >= 1,
            "conv2d: output width would be empty (input width "
                << d.W << ", kernel " << d.KW << ", dilation " << dilation
                << ", padding " << padding << ")");
  return d;
}

inline void conv2d_forward(const Tensor& in, const Tensor& ker, const ConvDims& d,
                           Tensor& out) {
  for (int oc = 0; oc < d.O; ++oc)
    for (int ic = 0; ic < d.C; ++ic)
      for (int ky = 0; ky < d.KH; ++ky) {
        auto [oy_lo, oy_hi] = tap_range(d.HO, d.H, d.stride, d.padding, ky * d.dilation);
        for (int kx = 0; kx < d.KW; ++kx) {
          auto [ox_lo, ox_hi] = tap_range(d.WO, d.W, d.stride, d.padding, kx * d.dilation);
          const double w = ker(oc, ic, ky, kx);
          for (int oy = oy_lo; oy <= oy_hi; ++oy) {
            const int iy = oy * d.stride - d.padding + ky * d.dilation;
            const double* in_row = &in(ic, iy, 0);
            double* out_row = &out(oc, oy, 0);
            int ix = ox_lo * d.stride - d.padding + kx * d.dilation;
            for (int ox = ox_lo; ox <= ox_hi; ++ox, ix += d.stride)
              out_row[ox] += w * in_row[ix];
          }
        }
      }
}

inline void conv2d_backward_input(const Tensor& adj_out, const Tensor& ker,
                                  const ConvDims& d, Tensor& adj_in) {
  for (int oc = 0; oc < d.O; ++oc)
    for (int ic = 0; ic < d.C; ++ic)
      for (int ky = 0; ky < d.KH; ++ky) {
        auto [oy_lo, oy_hi] = tap_range(d.HO, d.H, d.stride, d.padding, ky * d.dilation);
        for (int kx = 0; kx < d.KW; ++kx) {
          auto [ox_lo, ox_hi] = tap_range(d.WO, d.W, d.stride, d.padding, kx * d.dilation);
          const double w = ker(oc, ic, ky, kx);
          for (int oy = oy_lo; oy <= oy_hi; ++oy) {
            const int iy = oy * d.stride - d.padding + ky * d.dilation;
            const double* adj_row = &adj_out(oc, oy, 0);
            double* in_row = &adj_in(ic, iy, 0);
            int ix = ox_lo * d.stride - d.padding + kx * d.dilation;
            for (int ox = ox_lo; ox <= ox_hi; ++ox, ix += d.stride)
              in_row[ix] += w * adj_row[ox];
          }
        }
      }
}

inline void conv2d_backward_kernel(const Tensor& adj_out, const Tensor& in,
                                   const ConvDims& d, Tensor& adj_ker) {
  for (int oc = 0; oc < d.O; ++oc)
    for (int ic = 0; ic < d.C; ++ic)
      for (int ky = 0; ky < d.KH; ++ky) {
        auto [oy_lo, oy_hi] = tap_range(d.HO, d.H, d.stride, d.padding, ky * d.dilation);
        for (int kx = 0; kx < d.KW; ++kx) {
          auto [ox_lo, ox_hi] = tap_range(d.WO, d.W, d.stride, d.padding, kx * d.dilation);
          double acc = 0.0;
          for (int oy = oy_lo; oy <= oy_hi; ++oy) {
            const int iy = oy * d.stride - d.padding + ky * d.dilation;
            const double* adj_row = &adj_out(oc, oy, 0);
            const double* in_row = &in(ic, iy, 0);
            int ix = ox_lo * d.stride - d.padding + kx * d.dilation;
            for (int ox = ox_lo; ox <= ox_hi; ++ox, ix += d.stride)
              acc += adj_row[ox] * in_row[ix];
          }
          adj_ker(oc, ic, ky, kx) += acc;
        }
      }
}

}  // namespace op_detail

/// 2-D cross-correlation (no kernel flip) with zero padding.
/// input [C,H,W], kernel [O,C,kh,kw] -> [O,HO,WO] where
/// HO = (H + 2*padding - dilation*(kh-1) - 1)/stride + 1, same for width.
inline Var conv2d(Tape& t, Var input, Var kernel, int stride = 1, int dilation = 1,
                  int padding = 0) {
  const Tensor& in = t.value(input);
  const Tensor& ker = t.value(kernel);
  op_detail::ConvDims d = op_detail::conv_dims(in, ker, stride, dilation, padding);
  Tensor out({d.O, d.HO, d.WO});
  op_detail::conv2d_forward(in, ker, d, out);
  return t.record(std::move(out), {input, kernel}, [input, kernel, d](Tape& tt, Var self) {
    const Tensor& adj = tt.adjoint_of(self);
    op_detail::conv2d_backward_input(adj, tt.value(kernel), d, tt.adjoint_acc(input));
    op_detail::conv2d_backward_kernel(adj, tt.value(input), d, tt.adjoint_acc(kernel));
  });
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (corner-aligned)

namespace op_detail {

struct LerpTap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

inline std::vector<LerpTap> lerp_taps(int src, int dst) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(dst));
  const double scale = dst > 1 ? static_cast<double>(src - 1) / (dst - 1) : 0.0;
  for (int j = 0; j < dst; ++j) {
    double s = scale * j;
    int i0 = static_cast<int>(std::floor(s));
    if (i0 > src - 1) i0 = src - 1;
    int i1 = std::min(i0 + 1, src - 1);
    taps[static_cast<std::size_t>(j)] = {i0, i1, s - i0};
  }
  return taps;
}

}  // namespace op_detail

/// Corner-aligned bilinear interpolation of a [C,h,w] map up to [C,H,W]:
/// source coordinate for output j is j*(h-1)/(H-1), so the four corners map
/// exactly and a [0,1] row upsampled to width 3 reads [0, 0.5, 1].
inline Var upsample_bilinear(Tape& t, Var x, int out_h, int out_w) {
  const Tensor& xv = t.value(x);
  CRL_CHECK(xv.rank() == 3, "upsample_bilinear: input must be rank 3 [C,h,w], got "
                                << shape_string(xv.shape()));
  const int C = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
  CRL_CHECK(out_h >= h, "upsample_bilinear: target height " << out_h
                            << " smaller than source height " << h);
  CRL_CHECK(out_w >= w, "upsample_bilinear: target width " << out_w
                            << " smaller than source width " << w);
  auto ty = op_detail::lerp_taps(h, out_h);
  auto tx = op_detail::lerp_taps(w, out_w);
  Tensor y({C, out_h, out_w});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[static_cast<std::size_t>(ox)];
        y(c, oy, ox) = (1.0 - a.w1) * ((1.0 - b.w1) * xv(c, a.i0, b.i0) +
                                       b.w1 * xv(c, a.i0, b.i1)) +
                       a.w1 * ((1.0 - b.w1) * xv(c, a.i1, b.i0) +
                               b.w1 * xv(c, a.i1, b.i1));
      }
    }
  return t.record(std::move(y), {x},
                  [x, C, out_h, out_w, ty = std::move(ty),
                   tx = std::move(tx)](Tape& tt, Var self) {
                    const Tensor& adj = tt.adjoint_of(self);
                    Tensor& gx = tt.adjoint_acc(x);
                    for (int c = 0; c < C; ++c)
                      for (int oy = 0; oy < out_h; ++oy) {
                        const auto& a = ty[static_cast<std::size_t>(oy)];
                        for (int ox = 0; ox < out_w; ++ox) {
                          const auto& b = tx[static_cast<std::size_t>(ox)];
                          const double g = adj(c, oy, ox);
                          gx(c, a.i0, b.i0) += (1.0 - a.w1) * (1.0 - b.w1) * g;
                          gx(c, a.i0, b.i1) += (1.0 - a.w1) * b.w1 * g;
                          gx(c, a.i1, b.i0) += a.w1 * (1.0 - b.w1) * g;
                          gx(c, a.i1, b.i1) += a.w1 * b.w1 * g;
                        }
                      }
                  });
}

}  // namespace crl
