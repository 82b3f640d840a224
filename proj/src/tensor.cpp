// SPDX-License-Identifier: Apache-2.0
#include "drill/tensor.hpp"

#include "drill/error.hpp"

namespace drill {

Tensor::Tensor(Index rows, Index cols) : m_(Matrix::Zero(rows, cols)) {
  if (rows < 0 || cols < 0) throw ShapeError("negative tensor dimension " + shape_string(rows, cols));
}

Tensor::Tensor(Index rows, Index cols, std::vector<Real> values) {
  if (rows < 0 || cols < 0) throw ShapeError("negative tensor dimension " + shape_string(rows, cols));
  if (static_cast<Index>(values.size()) != rows * cols) {
    throw ShapeError("tensor " + shape_string(rows, cols) + " needs " + std::to_string(rows * cols) +
                     " values, got " + std::to_string(values.size()));
  }
  m_ = Eigen::Map<const Matrix>(values.data(), rows, cols);
}

Tensor Tensor::zeros(Index rows, Index cols) { return Tensor(rows, cols); }

Tensor Tensor::ones(Index rows, Index cols) { return Tensor(Matrix::Ones(rows, cols)); }

Tensor Tensor::identity(Index n) { return Tensor(Matrix::Identity(n, n)); }

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
  const auto nrows = static_cast<Index>(rows.size());
  const auto ncols = nrows == 0 ? Index{0} : static_cast<Index>(rows.begin()->size());
  Tensor t(nrows, ncols);
  Index r = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != ncols) throw ShapeError("ragged rows in Tensor::from_rows");
    Index c = 0;
    for (Real v : row) t(r, c++) = v;
    ++r;
  }
  return t;
}

Tensor Tensor::uniform(Index rows, Index cols, Real lo, Real hi, Rng& rng) {
  Tensor t(rows, cols);
  std::uniform_real_distribution<Real> dist(lo, hi);
  for (Real& v : t.values()) v = dist(rng);
  return t;
}

std::string shape_string(Index rows, Index cols) {
  return "(" + std::to_string(rows) + " x " + std::to_string(cols) + ")";
}

std::string shape_string(const Tensor& t) { return shape_string(t.rows(), t.cols()); }

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: " + shape_string(a) + " vs " + shape_string(b));
  }
  if (a.empty()) return 0.0;
  return (a.mat() - b.mat()).cwiseAbs().maxCoeff();
}

}  // namespace drill
