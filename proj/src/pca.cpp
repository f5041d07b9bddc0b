#include "mixdim/pca.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mixdim {

ProjectionBasis ProjectionBasis::empty(std::size_t head_dim) {
  ProjectionBasis b;
  b.head_dim = head_dim;
  b.basis = MatrixD(head_dim, 0);
  return b;
}

std::uint32_t ratio_to_dim(double ratio, std::size_t head_dim) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ContractError("compression ratio outside [0, 1]");
  return static_cast<std::uint32_t>(std::llround(ratio * static_cast<double>(head_dim)));
}

RatioSet::RatioSet(std::vector<double> ratios, std::size_t head_dim)
    : ratios_(std::move(ratios)), head_dim_(head_dim) {
  if (head_dim_ == 0) throw ContractError("ratio set needs a positive head dimension");
  std::sort(ratios_.begin(), ratios_.end());
  ratios_.erase(std::unique(ratios_.begin(), ratios_.end()), ratios_.end());
  if (ratios_.empty() || ratios_.front() != 0.0 || ratios_.back() != 1.0)
    throw ContractError("ratio set must contain 0 and 1");
  for (const double r : ratios_) {
    const std::uint32_t d = ratio_to_dim(r, head_dim_);
    if (dims_.empty() || dims_.back() != d) {
      dims_.push_back(d);
      dim_ratios_.push_back(r);
    }
  }
}

std::size_t RatioSet::max_stored_rank() const noexcept {
  return dims_.size() >= 2 ? dims_[dims_.size() - 2] : 0;
}

bool RatioSet::contains(std::uint32_t dim) const noexcept {
  return std::binary_search(dims_.begin(), dims_.end(), dim);
}

std::size_t RatioSet::index_of(std::uint32_t dim) const {
  const auto it = std::lower_bound(dims_.begin(), dims_.end(), dim);
  if (it == dims_.end() || *it != dim) throw ContractError("dim " + std::to_string(dim) + " is not a candidate");
  return static_cast<std::size_t>(it - dims_.begin());
}

double RatioSet::ratio_of(std::uint32_t dim) const {
  for (const double r : ratios_)
    if (ratio_to_dim(r, head_dim_) == dim) return r;
  throw ContractError("dim " + std::to_string(dim) + " is not a candidate");
}

ProjectionBasis fit_basis(const Matrix& x, std::size_t max_rank) {
  if (x.rows() == 0) throw ContractError("fit_basis: empty input");
  if (max_rank < 1 || max_rank > x.cols()) throw ContractError("fit_basis: max_rank outside [1, D]");
  const EigenDecomposition eig = sym_eig(gram(x));
  ProjectionBasis b;
  b.head_dim = x.cols();
  b.max_rank = max_rank;
  b.basis = eig.eigenvectors.columns(0, max_rank);
  b.eigenvalues.assign(eig.eigenvalues.begin(), eig.eigenvalues.begin() + static_cast<std::ptrdiff_t>(max_rank));
  return b;
}

ProjectionBasis fit_joint_basis(std::span<const Matrix> heads, std::size_t max_rank) {
  if (heads.empty()) throw ContractError("fit_joint_basis: no heads");
  for (const auto& h : heads)
    if (h.rows() != heads.front().rows() || h.cols() != heads.front().cols())
      throw ContractError("fit_joint_basis: heads differ in shape");
  return fit_basis(hstack(heads), max_rank);
}

MatrixD slice_basis(const ProjectionBasis& basis, std::size_t r) {
  if (r > basis.max_rank) throw ContractError("slice_basis: rank exceeds stored max_rank");
  return basis.basis.columns(0, r);
}

Matrix project(const Matrix& x, const ProjectionBasis& basis, std::size_t r) {
  if (x.cols() != basis.head_dim) throw ContractError("project: width does not match basis");
  return matmul(x, slice_basis(basis, r));
}

Matrix reconstruct(const Matrix& compressed, const ProjectionBasis& basis, std::size_t r) {
  if (compressed.cols() != r) throw ContractError("reconstruct: width does not match rank");
  return matmul_bt(compressed, slice_basis(basis, r));
}

MatrixD project_reconstruct(const Matrix& x, const ProjectionBasis& basis, std::size_t r) {
  if (x.cols() != basis.head_dim) throw ContractError("project_reconstruct: width does not match basis");
  const MatrixD p = slice_basis(basis, r);
  return matmul_bt(matmul(x.cast<double>(), p), p);
}

}  // namespace mixdim
