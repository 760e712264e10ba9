#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "hoiopt/error.hpp"
#include "hoiopt/rng.hpp"

namespace hoiopt {

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

/// Dense row-major tensor of doubles. Immutable after construction; copies
/// share the underlying buffer.
class Tensor {
 public:
  Tensor() : shape_{0}, data_(empty_buf()) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<const std::vector<double>>(std::move(data))) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_->size()))
      fail_shape("tensor data length " + std::to_string(data_->size()) +
                 " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
  }

  static Tensor full(Shape shape, double v) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v));
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    auto n = shape_numel(shape);
    std::vector<double> d(static_cast<size_t>(n));
    for (auto& x : d) x = stddev * rng.normal();
    return Tensor(std::move(shape), std::move(d));
  }

  const Shape& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t numel() const { return shape_numel(shape_); }
  int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }

  /// Rows/cols of a 2-D tensor (1-D counts as a single row).
  int64_t rows() const { return ndim() == 1 ? 1 : shape_[0]; }
  int64_t cols() const { return ndim() == 1 ? shape_[0] : shape_[1]; }

  bool is_scalar() const { return numel() == 1; }
  double scalar_value() const {
    if (!is_scalar()) fail_shape("expected scalar, got " + shape_str(shape_));
    return (*data_)[0];
  }

  const double* data() const { return data_->data(); }
  double operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
  double at(int64_t r, int64_t c) const { return (*data_)[static_cast<size_t>(r * cols() + c)]; }

  const std::vector<double>& vec() const { return *data_; }

  bool all_finite() const {
    for (double v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      fail_shape("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    Tensor t;
    t.shape_ = std::move(s);
    t.data_ = data_;
    return t;
  }

  std::string to_string(int64_t max_elems = 16) const {
    std::ostringstream os;
    os << shape_str(shape_) << "{";
    for (int64_t i = 0; i < numel() && i < max_elems; ++i) os << (i ? ", " : "") << (*data_)[i];
    if (numel() > max_elems) os << ", ...";
    os << "}";
    return os.str();
  }

 private:
  static std::shared_ptr<const std::vector<double>> empty_buf() {
    static auto buf = std::make_shared<const std::vector<double>>();
    return buf;
  }

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    fail_shape("max_abs_diff: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double l2_norm(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

}  // namespace hoiopt
