#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mixdim/linalg.hpp"

namespace testing {

inline mixdim::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  mixdim::Matrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(normal(rng));
  return m;
}

inline mixdim::MatrixD random_symmetric(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  mixdim::MatrixD s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) s(i, j) = s(j, i) = normal(rng);
  return s;
}

// Rows concentrated in a few directions, so truncation losses are small but nonzero.
inline mixdim::Matrix low_rank_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  mixdim::Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m(r, c) = static_cast<float>(normal(rng) * std::exp(-static_cast<double>(c) / (cols / 4.0 + 1.0)));
  return m;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

}  // namespace testing

#include "mixdim/scoring.hpp"

namespace testing {

// Random loss table over dims {0, 16, 32, 128}: zero at full dim, otherwise
// positive and not necessarily monotone or convex.
inline mixdim::LossTable random_table(std::size_t n, std::mt19937_64& rng,
                                      std::vector<std::uint32_t> dims = {0, 16, 32, 128}) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> losses;
  for (std::size_t t = 0; t < n; ++t) {
    const double scale = std::exp(3.0 * u(rng));
    for (std::size_t j = 0; j < dims.size(); ++j)
      losses.push_back(j + 1 == dims.size() ? 0.0 : scale * (1.0 - 0.8 * static_cast<double>(j) / dims.size()) * u(rng));
  }
  return mixdim::LossTable(std::move(dims), n, std::move(losses));
}

}  // namespace testing
