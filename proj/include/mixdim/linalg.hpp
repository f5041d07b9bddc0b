#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mixdim/error.hpp"

namespace mixdim {

// Dense row-major matrix. Cache data lives in BasicMatrix<float>; bases and
// reference computations use BasicMatrix<double>.
template <class T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, T{0}) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ContractError("matrix data length " + std::to_string(data_.size()) + " != " +
                          std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    for (const T v : data_) {
      if (!std::isfinite(v)) throw ContractError("matrix entries must be finite");
    }
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  BasicMatrix transposed() const {
    BasicMatrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  // Leading `count` columns starting at `first`.
  BasicMatrix columns(std::size_t first, std::size_t count) const {
    if (first + count > cols_) throw ContractError("column slice out of range");
    BasicMatrix out(rows_, count);
    for (std::size_t r = 0; r < rows_; ++r)
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + first), count,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(r * count));
    return out;
  }

  BasicMatrix rows_range(std::size_t first, std::size_t count) const {
    if (first + count > rows_) throw ContractError("row slice out of range");
    BasicMatrix out(count, cols_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_), count * cols_, out.data_.begin());
    return out;
  }

  template <class U>
  BasicMatrix<U> cast() const {
    BasicMatrix<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.data().begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;

struct EigenDecomposition {
  std::vector<double> eigenvalues;  // descending
  MatrixD eigenvectors;             // column j pairs with eigenvalues[j]
};

// Cyclic Jacobi eigensolver for symmetric matrices. Eigenvalues are sorted
// descending (stable on ties) and each eigenvector is signed so its entry of
// largest magnitude is non-negative, lowest index winning ties.
EigenDecomposition sym_eig(const MatrixD& s);

// A * B, accumulated in double.
template <class T, class U>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<U>& b) {
  if (a.cols() != b.rows()) throw ContractError("matmul: inner dimensions differ");
  BasicMatrix<T> out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * static_cast<double>(brow[j]);
    }
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) = static_cast<T>(acc[j]);
  }
  return out;
}

// A * B^T, accumulated in double.
template <class T, class U>
BasicMatrix<T> matmul_bt(const BasicMatrix<T>& a, const BasicMatrix<U>& b) {
  if (a.cols() != b.cols()) throw ContractError("matmul_bt: row widths differ");
  BasicMatrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += static_cast<double>(arow[k]) * static_cast<double>(brow[k]);
      out(i, j) = static_cast<T>(acc);
    }
  }
  return out;
}

// X^T X / N in double.
MatrixD gram(const Matrix& x);

template <class T>
BasicMatrix<T> vstack(std::span<const BasicMatrix<T>> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ContractError("vstack: column counts differ");
    rows += p.rows();
  }
  BasicMatrix<T> out(rows, cols);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(at * cols));
    at += p.rows();
  }
  return out;
}

template <class T>
BasicMatrix<T> hstack(std::span<const BasicMatrix<T>> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ContractError("hstack: row counts differ");
    cols += p.cols();
  }
  BasicMatrix<T> out(rows, cols);
  std::size_t at = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r) std::copy(p.row(r).begin(), p.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(at));
    at += p.cols();
  }
  return out;
}

// Numerically stable row softmax (max subtraction, double accumulation).
template <class T>
BasicMatrix<T> softmax_rows(const BasicMatrix<T>& m) {
  BasicMatrix<T> out(m.rows(), m.cols());
  std::vector<double> e(m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    if (row.empty()) continue;
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      e[c] = std::exp(static_cast<double>(row[c]) - mx);
      sum += e[c];
    }
    for (std::size_t c = 0; c < row.size(); ++c) out(r, c) = static_cast<T>(e[c] / sum);
  }
  return out;
}

template <class T>
std::vector<double> row_norms(const BasicMatrix<T>& m) {
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = 0.0;
    for (const T v : m.row(r)) acc += static_cast<double>(v) * static_cast<double>(v);
    out[r] = std::sqrt(acc);
  }
  return out;
}

template <class T>
double frobenius_norm(const BasicMatrix<T>& m) {
  double acc = 0.0;
  for (const T v : m.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

}  // namespace mixdim
