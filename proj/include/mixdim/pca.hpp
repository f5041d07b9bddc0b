#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mixdim/linalg.hpp"

namespace mixdim {

// Leading eigenvectors of X^T X / N (no centering), stored once at the largest
// rank ever needed. Any lower rank is the column prefix.
struct ProjectionBasis {
  std::size_t head_dim = 0;
  std::size_t max_rank = 0;
  MatrixD basis;                    // head_dim x max_rank
  std::vector<double> eigenvalues;  // max_rank, descending

  // Placeholder for caches whose candidate set has no rank strictly between 0 and D.
  static ProjectionBasis empty(std::size_t head_dim);
};

// Candidate compression ratios and the head-dimension counts they map to.
class RatioSet {
 public:
  // Throws ContractError unless ratios lie in [0, 1] and include both 0 and 1.
  RatioSet(std::vector<double> ratios, std::size_t head_dim);

  static RatioSet defaults(std::size_t head_dim) { return RatioSet({0.0, 0.125, 0.25, 1.0}, head_dim); }

  const std::vector<double>& ratios() const noexcept { return ratios_; }
  const std::vector<std::uint32_t>& dims() const noexcept { return dims_; }
  // Ratio each dim came from (first ratio mapping to it), aligned with dims().
  const std::vector<double>& dim_ratios() const noexcept { return dim_ratios_; }
  std::size_t head_dim() const noexcept { return head_dim_; }

  // Largest candidate dim strictly below head_dim (0 when there is none).
  std::size_t max_stored_rank() const noexcept;

  bool contains(std::uint32_t dim) const noexcept;
  std::size_t index_of(std::uint32_t dim) const;

  // The ratio a dim was derived from (first match after dedup).
  double ratio_of(std::uint32_t dim) const;

 private:
  std::vector<double> ratios_;
  std::size_t head_dim_;
  std::vector<std::uint32_t> dims_;
  std::vector<double> dim_ratios_;
};

// round-to-nearest(ratio * head_dim), validating ratio in [0, 1].
std::uint32_t ratio_to_dim(double ratio, std::size_t head_dim);

ProjectionBasis fit_basis(const Matrix& x, std::size_t max_rank);

// Fits one basis over the column-concatenation [X_0 | X_1 | ...].
ProjectionBasis fit_joint_basis(std::span<const Matrix> heads, std::size_t max_rank);

// First r columns of the stored basis. r == 0 gives a head_dim x 0 matrix.
MatrixD slice_basis(const ProjectionBasis& basis, std::size_t r);

Matrix project(const Matrix& x, const ProjectionBasis& basis, std::size_t r);
Matrix reconstruct(const Matrix& compressed, const ProjectionBasis& basis, std::size_t r);

// X P_r P_r^T computed entirely in double.
MatrixD project_reconstruct(const Matrix& x, const ProjectionBasis& basis, std::size_t r);

}  // namespace mixdim
