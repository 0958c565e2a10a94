#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tract/errors.hpp"

namespace tract {

// Dense row-major 2-D array of doubles. Scalars are 1x1, column vectors Nx1.
// Everything in the library runs in 64-bit precision.
class Array {
 public:
  Array() = default;
  Array(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), v_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw ConfigError("Array: negative dimension");
  }

  static Array scalar(double v) {
    Array a(1, 1);
    a.v_[0] = v;
    return a;
  }
  static Array col(std::vector<double> v) {
    Array a;
    a.rows_ = static_cast<int>(v.size());
    a.cols_ = 1;
    a.v_ = std::move(v);
    return a;
  }
  static Array row(std::vector<double> v) {
    Array a;
    a.rows_ = 1;
    a.cols_ = static_cast<int>(v.size());
    a.v_ = std::move(v);
    return a;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  double& at(int r, int c) { return v_[static_cast<std::size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return v_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double* row_ptr(int r) { return v_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row_ptr(int r) const { return v_.data() + static_cast<std::size_t>(r) * cols_; }

  bool same_shape(const Array& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::string shape_str() const {
    return "(" + std::to_string(rows_) + " x " + std::to_string(cols_) + ")";
  }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

  bool operator==(const Array& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && v_ == o.v_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> v_;
};

}  // namespace tract
