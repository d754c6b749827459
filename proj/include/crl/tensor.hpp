#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <ostream>
#include <utility>
#include <vector>

#include "crl/common.hpp"

namespace crl {

/// Dense row-major tensor of doubles. Rank 0 is a scalar (one element).
///
/// Values are value-semantic: copies are deep, and anything handed to a Tape
/// is copied, so a tensor visible to more than one owner is never mutated.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : Tensor(std::move(shape), 0.0) {}

  Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), fill);
  }

  Tensor(std::vector<int> shape, std::vector<double> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    CRL_CHECK(data_.size() == checked_numel(shape_),
              "Tensor: " << data_.size() << " values for a shape holding "
                         << checked_numel(shape_) << " elements");
  }

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

  static Tensor uniform(std::vector<int> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = rng.uniform(lo, hi);
    return t;
  }

  static Tensor normal(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = stddev * rng.normal();
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const {
    CRL_CHECK(axis >= 0 && axis < rank(), "Tensor::extent: axis " << axis
                                          << " out of range for rank " << rank());
    return shape_[static_cast<std::size_t>(axis)];
  }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Fast unchecked multi-index access for hot loops.
  double& operator()(int i, int j) { return data_[idx2(i, j)]; }
  const double& operator()(int i, int j) const { return data_[idx2(i, j)]; }
  double& operator()(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  const double& operator()(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
  double& operator()(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  const double& operator()(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

  bool is_scalar() const { return data_.size() == 1; }

  double item() const {
    CRL_CHECK(data_.size() == 1,
              "Tensor::item: tensor holds " << data_.size() << " elements");
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

 private:
  static std::size_t checked_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
      CRL_CHECK(e > 0, "Tensor: shape extent " << e << " is not positive");
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }

  std::size_t idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t idx3(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t idx4(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

/// Exact bit equality (shape and payload), including NaN payloads.
inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

inline std::ostream& operator<<(std::ostream& os, const Tensor& t) {
  os << "Tensor[";
  for (int i = 0; i < t.rank(); ++i) os << (i ? "x" : "") << t.shape()[static_cast<std::size_t>(i)];
  os << "]";
  return os;
}

inline std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream oss;
  oss << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) oss << (i ? "," : "") << shape[i];
  oss << "]";
  return oss.str();
}

}  // namespace crl
