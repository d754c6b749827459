#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "crl/labels.hpp"
#include "crl/tensor.hpp"

// Synthetic paired RGB-D scenes: layered rectangles and ellipses over a
// shaded background plane. Color, shape, and depth band are all tied to the
// object class so each modality carries signal about both tasks. Also houses
// the simplified surface encoding of depth, normalization, the paired
// flip/rotate augmentation, and epoch batching.

namespace crl {

struct Intrinsics {
  double focal = 28.8;
  double cx = 15.5;
  double cy = 15.5;
};

struct SceneSpec {
  uint64_t seed = 0;
  int height = 32;
  int width = 32;
  int classes = 5;  // labels 1..classes; 1 is the background
  int min_objects = 2;
  int max_objects = 5;
  double focal = 0.0;  // <= 0 means 0.9 * width

  void validate() const {
    CRL_CHECK(height >= 8 && width >= 8,
              "SceneSpec: size must be at least 8x8, got " << height << "x" << width);
    CRL_CHECK(height % 4 == 0 && width % 4 == 0,
              "SceneSpec: size must be divisible by 4, got " << height << "x" << width);
    CRL_CHECK(classes >= 2, "SceneSpec: need >= 2 classes, got " << classes);
    CRL_CHECK(min_objects >= 0 && min_objects <= max_objects,
              "SceneSpec: bad object count range [" << min_objects << ", "
                                                    << max_objects << "]");
  }

  Intrinsics intrinsics() const {
    return {focal > 0.0 ? focal : 0.9 * width, (width - 1) / 2.0, (height - 1) / 2.0};
  }
};

struct Sample {
  std::string id;
  Tensor rgb;        // [3,H,W]; raw in [0,1], normalized in [-0.5,0.5]
  Tensor hha;        // [3,H,W] in [0,1]
  Tensor depth_raw;  // [H,W] strictly positive
  LabelMap labels;   // 0 = ignore, 1..K
  bool normalized = false;

  Sample(int h, int w)
      : rgb({3, h, w}), hha({3, h, w}), depth_raw({h, w}), labels(h, w) {}

  int height() const { return labels.height; }
  int width() const { return labels.width; }
};

// ---------------------------------------------------------------------------
// Scene layout

struct SceneObject {
  int cls = 2;
  bool ellipse = false;
  double cx = 0, cy = 0;  // center, pixel coordinates
  double rx = 1, ry = 1;  // half extents
  double z0 = 1.4;        // depth at the center
  double gx = 0, gy = 0;  // depth slope per pixel
  double r = 0, g = 0, b = 0;

  bool covers(double x, double y) const {
    const double dx = (x - cx) / rx;
    const double dy = (y - cy) / ry;
    return ellipse ? dx * dx + dy * dy <= 1.0
                   : std::abs(x - cx) <= rx && std::abs(y - cy) <= ry;
  }

  double depth_at(double x, double y) const {
    return z0 + gx * (x - cx) + gy * (y - cy);
  }
};

struct SceneLayout {
  double bg_gx = 0, bg_gy = 0;
  std::vector<SceneObject> objects;

  double bg_depth_at(double x, double y, int h, int w) const {
    return 4.2 + bg_gy * (y / (h - 1)) + bg_gx * (x / (w - 1));
  }
};

namespace scene_detail {

/// Depth band center for a class; nearer bands for lower classes, all in
/// front of the background plane at 4.2+.
inline double band_base(int cls, int classes) {
  return 1.4 + (cls - 2) * 2.4 / std::max(1, classes - 2);
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - f * s);
  const double u = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: r = v; g = u; b = p; return;
    case 1: r = q; g = v; b = p; return;
    case 2: r = p; g = v; b = u; return;
    case 3: r = p; g = q; b = v; return;
    case 4: r = u; g = p; b = v; return;
    default: r = v; g = p; b = q; return;
  }
}

inline void class_color(int cls, int classes, double& r, double& g, double& b) {
  hsv_to_rgb((cls - 2) / static_cast<double>(std::max(1, classes - 1)), 0.65, 0.85, r,
             g, b);
}

}  // namespace scene_detail

// ---------------------------------------------------------------------------
// Depth surface encoding

/// Three channels from a positive depth map: min-max scaled disparity,
/// min-max scaled height of the back-projected point along the up axis, and
/// the angle between the surface normal (from depth gradients) and the up
/// direction, over pi. Degenerate (constant) disparity or height scales to a
/// flat 0.5. All channels land in [0,1].
inline Tensor hha_encode(const Tensor& depth, const Intrinsics& cam) {
  CRL_CHECK(depth.rank() == 2,
            "hha_encode: depth must be [H,W], got " << shape_string(depth.shape()));
  const int h = depth.extent(0);
  const int w = depth.extent(1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      CRL_CHECK(depth(y, x) > 0.0, "hha_encode: non-positive depth "
                                       << depth(y, x) << " at pixel (" << y << "," << x
                                       << ")");

  Tensor out({3, h, w});
  auto minmax_fill = [&](int channel, auto value_at) {
    double lo = value_at(0, 0), hi = lo;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = value_at(y, x);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out(channel, y, x) = hi > lo ? (value_at(y, x) - lo) / (hi - lo) : 0.5;
  };
  minmax_fill(0, [&](int y, int x) { return 1.0 / depth(y, x); });
  minmax_fill(1, [&](int y, int x) { return (cam.cy - y) * depth(y, x) / cam.focal; });

  // Surface normals from central differences of the back-projected points;
  // one-sided at the borders.
  auto point = [&](int y, int x, double* p) {
    const double z = depth(y, x);
    p[0] = (x - cam.cx) * z / cam.focal;
    p[1] = (y - cam.cy) * z / cam.focal;
    p[2] = z;
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - 1), x1 = std::min(w - 1, x + 1);
      const int y0 = std::max(0, y - 1), y1 = std::min(h - 1, y + 1);
      double pa[3], pb[3], qa[3], qb[3];
      point(y, x1, pa);
      point(y, x0, pb);
      point(y1, x, qa);
      point(y0, x, qb);
      const double dx[3] = {(pa[0] - pb[0]) / (x1 - x0), (pa[1] - pb[1]) / (x1 - x0),
                            (pa[2] - pb[2]) / (x1 - x0)};
      const double dy[3] = {(qa[0] - qb[0]) / (y1 - y0), (qa[1] - qb[1]) / (y1 - y0),
                            (qa[2] - qb[2]) / (y1 - y0)};
      double n[3] = {dx[1] * dy[2] - dx[2] * dy[1], dx[2] * dy[0] - dx[0] * dy[2],
                     dx[0] * dy[1] - dx[1] * dy[0]};
      const double norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      // Degenerate gradient: treat as facing the camera, 90 degrees to up.
      const double ny = norm > 0.0 ? n[1] / norm : 0.0;
      out(2, y, x) = std::acos(std::clamp(-ny, -1.0, 1.0)) / 3.14159265358979323846;
    }
  }
  return out;
}

/// Renders sample `index` of the virtual dataset described by `spec`, and
/// hands back the object layout so tests can re-derive occlusion per pixel.
inline std::pair<Sample, SceneLayout> generate_scene_with_layout(const SceneSpec& spec,
                                                                 int index) {
  spec.validate();
  CRL_CHECK(index >= 0, "generate_scene: negative index " << index);
  const int h = spec.height;
  const int w = spec.width;
  Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(index)));

  SceneLayout layout;
  layout.bg_gy = rng.uniform(0.4, 0.9);
  layout.bg_gx = rng.uniform(-0.25, 0.25);
  const int count = spec.min_objects +
                    static_cast<int>(rng.integer(
                        static_cast<uint64_t>(spec.max_objects - spec.min_objects) + 1));
  for (int i = 0; i < count; ++i) {
    SceneObject o;
    o.cls = 2 + static_cast<int>(rng.integer(static_cast<uint64_t>(spec.classes - 1)));
    o.ellipse = (o.cls % 2) == 1;
    o.cx = rng.uniform(0.0, w - 1.0);
    o.cy = rng.uniform(0.0, h - 1.0);
    o.z0 = scene_detail::band_base(o.cls, spec.classes) + rng.uniform(-0.25, 0.25);
    const double scale = rng.uniform(0.10, 0.22) * std::min(h, w) * (1.9 / o.z0);
    o.rx = std::max(1.5, scale * rng.uniform(0.75, 1.3));
    o.ry = std::max(1.5, scale * rng.uniform(0.75, 1.3));
    o.gx = rng.uniform(-0.1, 0.1) / std::max(1.0, o.rx);
    o.gy = rng.uniform(-0.1, 0.1) / std::max(1.0, o.ry);
    scene_detail::class_color(o.cls, spec.classes, o.r, o.g, o.b);
    layout.objects.push_back(o);
  }

  Sample s(h, w);
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%06d", index);
  s.id = buf;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double z = layout.bg_depth_at(x, y, h, w);
      int cls = 1;
      double cr = 0.30 + 0.10 * (static_cast<double>(y) / (h - 1));
      double cg = 0.33 + 0.08 * (static_cast<double>(y) / (h - 1));
      double cb = 0.37 + 0.06 * (static_cast<double>(y) / (h - 1));
      for (const SceneObject& o : layout.objects) {
        if (!o.covers(x, y)) continue;
        const double oz = o.depth_at(x, y);
        if (oz < z) {
          z = oz;
          cls = o.cls;
          cr = o.r;
          cg = o.g;
          cb = o.b;
        }
      }
      s.labels.at(y, x) = cls;
      s.depth_raw(y, x) = z;
      s.rgb(0, y, x) = std::clamp(cr + rng.uniform(-0.02, 0.02), 0.0, 1.0);
      s.rgb(1, y, x) = std::clamp(cg + rng.uniform(-0.02, 0.02), 0.0, 1.0);
      s.rgb(2, y, x) = std::clamp(cb + rng.uniform(-0.02, 0.02), 0.0, 1.0);
    }
  }
  s.hha = hha_encode(s.depth_raw, spec.intrinsics());
  return {std::move(s), std::move(layout)};
}

inline Sample generate_scene(const SceneSpec& spec, int index) {
  return generate_scene_with_layout(spec, index).first;
}

// ---------------------------------------------------------------------------
// Normalization

/// Centers raw [0,1] rgb to [-0.5,0.5] exactly once; labels, depth, and the
/// already-[0,1] surface channels stay as they are.
inline void normalize(Sample& s) {
  if (s.normalized) return;
  for (std::size_t i = 0; i < s.rgb.size(); ++i) s.rgb[i] -= 0.5;
  s.normalized = true;
}

// ---------------------------------------------------------------------------
// Paired augmentation

/// Flip and rotation with one shared spatial map for every array: continuous
/// channels resample bilinearly, labels by nearest neighbor. Pixels pulled
/// from outside the source get the ignore label, zero color, and unit depth
/// (they are masked out of the depth losses by the ignore label).
inline Sample augment_with(const Sample& s, bool flip, double angle_deg) {
  const int h = s.height();
  const int w = s.width();
  Sample out(h, w);
  out.id = s.id;
  out.normalized = s.normalized;

  const double rad = angle_deg * 3.14159265358979323846 / 180.0;
  const double c = std::cos(rad), sn = std::sin(rad);
  const double ccx = (w - 1) / 2.0, ccy = (h - 1) / 2.0;

  auto bilinear = [](const Tensor& t, int ch, double sy, double sx) {
    const int h_ = t.extent(t.rank() - 2), w_ = t.extent(t.rank() - 1);
    const int j0 = static_cast<int>(std::floor(sx));
    const int i0 = static_cast<int>(std::floor(sy));
    const int j1 = std::min(j0 + 1, w_ - 1);
    const int i1 = std::min(i0 + 1, h_ - 1);
    const double wx = sx - j0, wy = sy - i0;
    auto at = [&](int i, int j) { return t.rank() == 3 ? t(ch, i, j) : t(i, j); };
    return (1.0 - wy) * ((1.0 - wx) * at(i0, j0) + wx * at(i0, j1)) +
           wy * ((1.0 - wx) * at(i1, j0) + wx * at(i1, j1));
  };

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse map: undo the rotation, then undo the flip.
      double sx = c * (x - ccx) + sn * (y - ccy) + ccx;
      const double sy = -sn * (x - ccx) + c * (y - ccy) + ccy;
      if (flip) sx = (w - 1) - sx;
      const bool inside = sx >= 0.0 && sx <= w - 1.0 && sy >= 0.0 && sy <= h - 1.0;
      if (!inside) {
        for (int ch = 0; ch < 3; ++ch) {
          out.rgb(ch, y, x) = 0.0;
          out.hha(ch, y, x) = 0.0;
        }
        out.depth_raw(y, x) = 1.0;
        out.labels.at(y, x) = 0;
        continue;
      }
      for (int ch = 0; ch < 3; ++ch) {
        out.rgb(ch, y, x) = bilinear(s.rgb, ch, sy, sx);
        out.hha(ch, y, x) = bilinear(s.hha, ch, sy, sx);
      }
      out.depth_raw(y, x) = bilinear(s.depth_raw, 0, sy, sx);
      out.labels.at(y, x) = s.labels.at(static_cast<int>(std::lround(sy)),
                                        static_cast<int>(std::lround(sx)));
    }
  }
  return out;
}

/// Coin-flip mirror plus a rotation uniform in [-10, 10] degrees. One rng
/// drives both decisions; both views of the sample share them by being in the
/// same Sample.
inline Sample augment(const Sample& s, Rng& rng) {
  const bool flip = rng.coin();
  const double angle = rng.uniform(-10.0, 10.0);
  return augment_with(s, flip, angle);
}

// ---------------------------------------------------------------------------
// Batching

/// Epoch-shuffled index batches; the final short batch is kept.
inline std::vector<std::vector<int>> make_batches(int count, int batch_size, Rng& rng) {
  CRL_CHECK(count >= 1, "make_batches: empty dataset");
  CRL_CHECK(batch_size >= 1, "make_batches: batch size must be >= 1, got " << batch_size);
  std::vector<int> order(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.integer(static_cast<uint64_t>(i))]);
  std::vector<std::vector<int>> batches;
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<long>(at),
                         order.begin() + static_cast<long>(end));
  }
  return batches;
}

}  // namespace crl
