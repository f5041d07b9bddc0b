#include <doctest.h>

#include <random>

#include "mixdim/linalg.hpp"
#include "support.hpp"

using namespace mixdim;

TEST_SUITE("linalg") {

TEST_CASE("sym_eig on the identity keeps the axes") {
  const auto e = sym_eig(MatrixD::identity(3));
  for (double v : e.eigenvalues) CHECK(v == doctest::Approx(1.0));
  CHECK(e.eigenvectors == MatrixD::identity(3));
}

TEST_CASE("sym_eig on a diagonal matrix") {
  MatrixD s(2, 2, {3.0, 0.0, 0.0, 1.0});
  const auto e = sym_eig(s);
  CHECK(e.eigenvalues[0] == doctest::Approx(3.0));
  CHECK(e.eigenvalues[1] == doctest::Approx(1.0));
  CHECK(e.eigenvectors == MatrixD::identity(2));
}

TEST_CASE("sym_eig reconstructs random symmetric matrices") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 8;
    const MatrixD s = testing::random_symmetric(n, rng);
    const auto e = sym_eig(s);
    MatrixD scaled = e.eigenvectors;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) scaled(i, j) *= e.eigenvalues[j];
    const MatrixD back = matmul_bt(scaled, e.eigenvectors);
    double err = 0.0;
    double trace = 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      trace += s(i, i);
      sum += e.eigenvalues[i];
      for (std::size_t j = 0; j < n; ++j) err += (back(i, j) - s(i, j)) * (back(i, j) - s(i, j));
    }
    CHECK(std::sqrt(err) <= 1e-6 * frobenius_norm(s));
    CHECK(sum == doctest::Approx(trace).epsilon(1e-6));
    CHECK(std::is_sorted(e.eigenvalues.rbegin(), e.eigenvalues.rend()));
    // Sign convention: the largest-magnitude entry of each column is non-negative.
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t arg = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (std::abs(e.eigenvectors(i, j)) > std::abs(e.eigenvectors(arg, j))) arg = i;
      CHECK(e.eigenvectors(arg, j) >= 0.0);
    }
  }
}

TEST_CASE("sym_eig is bitwise deterministic") {
  std::mt19937_64 rng(3);
  const MatrixD s = testing::random_symmetric(12, rng);
  const auto a = sym_eig(s);
  const auto b = sym_eig(s);
  CHECK(a.eigenvalues == b.eigenvalues);
  CHECK(a.eigenvectors == b.eigenvectors);
}

TEST_CASE("sym_eig rejects bad input") {
  CHECK_THROWS_AS(sym_eig(MatrixD(2, 3)), ContractError);
  CHECK_THROWS_AS(sym_eig(MatrixD(2, 2, {1.0, 2.0, 0.0, 1.0})), ContractError);
}

TEST_CASE("softmax_rows basics") {
  const Matrix uniform(1, 3, {0.f, 0.f, 0.f});
  const auto u = softmax_rows(uniform);
  for (float v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

  const Matrix big(1, 2, {1000.f, 0.f});
  const auto b = softmax_rows(big);
  CHECK(b(0, 0) == doctest::Approx(1.0));
  CHECK(b(0, 1) == doctest::Approx(0.0));
  CHECK(std::isfinite(b(0, 1)));
}

TEST_CASE("softmax_rows matches a long double reference and is shift invariant") {
  std::mt19937_64 rng(5);
  const Matrix m = testing::random_matrix(4, 6, rng, 3.0);
  const Matrix s = softmax_rows(m);
  Matrix shifted = m;
  for (std::size_t c = 0; c < 6; ++c) shifted(2, c) += 17.5f;
  const Matrix t = softmax_rows(shifted);
  for (std::size_t r = 0; r < 4; ++r) {
    long double denom = 0;
    for (std::size_t c = 0; c < 6; ++c) denom += std::exp(static_cast<long double>(m(r, c)));
    double row_sum = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      const double ref = static_cast<double>(std::exp(static_cast<long double>(m(r, c))) / denom);
      CHECK(std::abs(s(r, c) - ref) < 1e-6);
      row_sum += s(r, c);
    }
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(t(2, c) - s(2, c)) < 1e-6);
}

TEST_CASE("row_norms") {
  CHECK(row_norms(Matrix(1, 2, {3.f, 4.f}))[0] == doctest::Approx(5.0));
  for (double v : row_norms(Matrix(3, 4))) CHECK(v == 0.0);
  std::mt19937_64 rng(8);
  const Matrix m = testing::random_matrix(5, 7, rng);
  const auto n = row_norms(m);
  for (std::size_t r = 0; r < 5; ++r) {
    long double acc = 0;
    for (float v : m.row(r)) acc += static_cast<long double>(v) * v;
    CHECK(n[r] == doctest::Approx(static_cast<double>(std::sqrt(acc))).epsilon(1e-6));
  }
}

TEST_CASE("matrix construction validates data") {
  CHECK_THROWS_AS(Matrix(2, 2, {1.f, 2.f, 3.f}), ContractError);
  CHECK_THROWS_AS(Matrix(1, 1, {std::nanf("")}), ContractError);
}

}
