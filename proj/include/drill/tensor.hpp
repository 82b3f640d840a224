// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace drill {

using Real = double;
using Index = Eigen::Index;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;
/// Vocabulary label id; dense in [0, |V|).
using TokenId = std::int32_t;

/// Dense rank-2 array of reals stored row-major.
///
/// Column vectors are (n x 1), row vectors (1 x n). Every value in the
/// library, from a single context vector to a full label matrix, is a Tensor.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Index rows, Index cols);
  Tensor(Index rows, Index cols, std::vector<Real> values);
  explicit Tensor(Matrix m) : m_(std::move(m)) {}

  static Tensor zeros(Index rows, Index cols);
  static Tensor ones(Index rows, Index cols);
  static Tensor identity(Index n);
  static Tensor from_rows(std::initializer_list<std::initializer_list<Real>> rows);
  /// Entries drawn i.i.d. uniform in [lo, hi], filled row-major.
  static Tensor uniform(Index rows, Index cols, Real lo, Real hi, Rng& rng);

  Index rows() const { return m_.rows(); }
  Index cols() const { return m_.cols(); }
  Index size() const { return m_.size(); }
  bool empty() const { return m_.size() == 0; }

  Real operator()(Index r, Index c) const { return m_(r, c); }
  Real& operator()(Index r, Index c) { return m_(r, c); }

  std::span<const Real> values() const { return {m_.data(), static_cast<std::size_t>(m_.size())}; }
  std::span<Real> values() { return {m_.data(), static_cast<std::size_t>(m_.size())}; }

  const Matrix& mat() const { return m_; }
  Matrix& mat() { return m_; }

  Tensor transposed() const { return Tensor(Matrix(m_.transpose())); }
  bool all_finite() const {
    // x * 0 is NaN exactly for non-finite x, and NaN survives the sum.
    return std::isfinite((m_.array() * 0.0).sum());
  }
  bool same_shape(const Tensor& other) const {
    return rows() == other.rows() && cols() == other.cols();
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.m_ == b.m_;
  }

 private:
  Matrix m_;
};

/// "(rows x cols)" for diagnostics.
std::string shape_string(Index rows, Index cols);
std::string shape_string(const Tensor& t);

/// Largest absolute entrywise difference; shapes must agree.
Real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace drill
