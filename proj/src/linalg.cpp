#include "mixdim/linalg.hpp"

#include <numeric>

namespace mixdim {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kOffDiagonalTolerance = 1e-10;
constexpr double kSymmetryTolerance = 1e-6;

double off_diagonal_norm(const MatrixD& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) acc += a(i, j) * a(i, j);
  return std::sqrt(acc);
}

// One Jacobi rotation zeroing a(p, q); accumulates into v.
void rotate(MatrixD& a, MatrixD& v, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;
  const std::size_t n = a.rows();
  for (std::size_t k = 0; k < n; ++k) {
    const double akp = a(k, p);
    const double akq = a(k, q);
    a(k, p) = c * akp - s * akq;
    a(k, q) = s * akp + c * akq;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double apk = a(p, k);
    const double aqk = a(q, k);
    a(p, k) = c * apk - s * aqk;
    a(q, k) = s * apk + c * aqk;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double vkp = v(k, p);
    const double vkq = v(k, q);
    v(k, p) = c * vkp - s * vkq;
    v(k, q) = s * vkp + c * vkq;
  }
}

}  // namespace

EigenDecomposition sym_eig(const MatrixD& s) {
  if (s.rows() != s.cols()) throw ContractError("sym_eig: matrix is not square");
  const std::size_t n = s.rows();
  const double norm = frobenius_norm(s);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(s(i, j) - s(j, i)) > kSymmetryTolerance * norm)
        throw ContractError("sym_eig: matrix is not symmetric");

  MatrixD a = s;
  MatrixD v = MatrixD::identity(n);
  const double tol = kOffDiagonalTolerance * norm;
  double off = off_diagonal_norm(a);
  int sweep = 0;
  while (off > tol) {
    if (sweep == kMaxSweeps) throw NumericalError("sym_eig: Jacobi did not converge", off);
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) rotate(a, v, p, q);
    off = off_diagonal_norm(a);
    ++sweep;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

  EigenDecomposition out;
  out.eigenvalues.resize(n);
  out.eigenvectors = MatrixD(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.eigenvalues[j] = a(src, src);
    std::size_t pivot = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v(k, src)) > std::abs(v(pivot, src))) pivot = k;
    const double sign = v(pivot, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, j) = sign * v(k, src);
  }
  return out;
}

MatrixD gram(const Matrix& x) {
  if (x.rows() == 0) throw ContractError("gram: empty input");
  const std::size_t d = x.cols();
  MatrixD g(d, d);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = row[i];
      for (std::size_t j = i; j < d; ++j) g(i, j) += xi * static_cast<double>(row[j]);
    }
  }
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      g(i, j) *= inv;
      g(j, i) = g(i, j);
    }
  return g;
}

}  // namespace mixdim
