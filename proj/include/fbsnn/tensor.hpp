// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <ostream>
#include <string>
#include <utility>

#include "fbsnn/errors.hpp"

namespace fbsnn {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major matrix of doubles. Every vector quantity in the solver
/// (states, increments, network outputs, weights) is stored as one of these.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : m_(Matrix::Constant(static_cast<Eigen::Index>(rows),
                            static_cast<Eigen::Index>(cols), fill)) {}
  explicit Tensor(Matrix m) : m_(std::move(m)) {}

  static Tensor from_rows(
      std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Tensor out(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("from_rows: ragged initializer");
      std::size_t j = 0;
      for (double v : row) out(i, j++) = v;
      ++i;
    }
    return out;
  }

  static Tensor row_vector(std::span<const double> values) {
    Tensor out(1, values.size());
    std::copy(values.begin(), values.end(), out.data());
    return out;
  }

  static Tensor identity(std::size_t n) {
    return Tensor(Matrix::Identity(static_cast<Eigen::Index>(n),
                                   static_cast<Eigen::Index>(n)));
  }

  std::size_t rows() const { return static_cast<std::size_t>(m_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(m_.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(m_.size()); }
  bool same_shape(const Tensor& o) const {
    return rows() == o.rows() && cols() == o.cols();
  }

  double& operator()(std::size_t r, std::size_t c) {
    return m_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  double operator()(std::size_t r, std::size_t c) const {
    return m_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }

  double* data() { return m_.data(); }
  const double* data() const { return m_.data(); }
  std::span<double> values() { return {m_.data(), size()}; }
  std::span<const double> values() const { return {m_.data(), size()}; }

  Matrix& mat() { return m_; }
  const Matrix& mat() const { return m_; }

  /// Value of a 1x1 tensor.
  double scalar() const {
    if (rows() != 1 || cols() != 1) {
      throw ShapeError("scalar() on " + shape_string() + " tensor");
    }
    return m_(0, 0);
  }

  bool all_finite() const { return m_.allFinite(); }

  std::string shape_string() const {
    return std::to_string(rows()) + "x" + std::to_string(cols());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::equal(a.data(), a.data() + a.size(), b.data());
  }

 private:
  Matrix m_;
};

/// Largest absolute entrywise difference; shapes must agree.
inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " +
                     b.shape_string());
  }
  if (a.size() == 0) return 0.0;
  return (a.mat() - b.mat()).cwiseAbs().maxCoeff();
}

inline double frobenius_norm(const Tensor& a) { return a.mat().norm(); }

inline std::ostream& operator<<(std::ostream& os, const Tensor& a) {
  os << a.shape_string() << " [";
  for (std::size_t r = 0; r < a.rows(); ++r) {
    os << (r ? "; " : "");
    for (std::size_t c = 0; c < a.cols(); ++c) os << (c ? ", " : "") << a(r, c);
  }
  return os << ']';
}

}  // namespace fbsnn
