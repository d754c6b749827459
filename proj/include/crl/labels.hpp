#pragma once

#include <cstddef>
#include <vector>

#include "crl/common.hpp"

namespace crl {

/// Integer class-id image. Class 0 is the ignore marker everywhere in the
/// library (unlabeled or out-of-support after augmentation); real classes
/// are 1..K.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int> v;

  LabelMap() = default;
  LabelMap(int h, int w, int fill = 0)
      : height(h), width(w), v(checked_area(h, w), fill) {}

  int& at(int y, int x) { return v[static_cast<std::size_t>(y) * width + x]; }
  int at(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }

  std::size_t size() const { return v.size(); }
  bool same_shape(const LabelMap& o) const {
    return height == o.height && width == o.width;
  }
  bool operator==(const LabelMap& o) const {
    return height == o.height && width == o.width && v == o.v;
  }

 private:
  static std::size_t checked_area(int h, int w) {
    CRL_CHECK(h > 0 && w > 0, "LabelMap: extents " << h << "x" << w << " must be positive");
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
};

}  // namespace crl
