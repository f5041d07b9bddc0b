#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "mixdim/linalg.hpp"
#include "mixdim/pca.hpp"

namespace mixdim {

struct HullPoint {
  std::uint32_t dim = 0;
  double loss = 0.0;
  friend bool operator==(const HullPoint&, const HullPoint&) = default;
};

// Monotone repair (running minimum over increasing dims) followed by the lower
// convex hull of the (dim, loss) points. Collinear interior points are dropped
// and the last point is always kept. Dims strictly increase and losses strictly
// decrease along the hull, except for a final zero-slope segment when a smaller
// dim already reaches the loss of the last one.
std::vector<HullPoint> prune_hull(std::span<const std::uint32_t> dims, std::span<const double> losses);

// Per-token, per-candidate-dim loss scores for the compressible tokens of one
// allocation problem, plus their repaired values and lower hulls.
class LossTable {
 public:
  LossTable() = default;
  // `losses` is row-major num_tokens x dims.size(). Dims must start at 0 and
  // strictly increase; losses must be finite and non-negative.
  LossTable(std::vector<std::uint32_t> dims, std::size_t num_tokens, std::vector<double> losses);

  std::size_t num_tokens() const noexcept { return num_tokens_; }
  const std::vector<std::uint32_t>& dims() const noexcept { return dims_; }
  std::uint32_t full_dim() const noexcept { return dims_.back(); }

  double raw(std::size_t token, std::size_t dim_index) const noexcept { return raw_[token * dims_.size() + dim_index]; }
  double repaired(std::size_t token, std::size_t dim_index) const noexcept {
    return repaired_[token * dims_.size() + dim_index];
  }
  // Repaired loss at a candidate dim value.
  double loss_at(std::size_t token, std::uint32_t dim) const;
  std::span<const HullPoint> hull(std::size_t token) const noexcept {
    return {hull_points_.data() + hull_offsets_[token], hull_offsets_[token + 1] - hull_offsets_[token]};
  }

  // Concatenates several tables sharing the same dims (joint intra-layer problem).
  static LossTable concat(std::span<const LossTable> parts);

  // Writes `token_index,dim,loss` rows (raw scores), optionally prefixed by a head column.
  void write_csv(std::ostream& out, bool with_header, long head = -1) const;

 private:
  std::vector<std::uint32_t> dims_;
  std::size_t num_tokens_ = 0;
  std::vector<double> raw_;
  std::vector<double> repaired_;
  std::vector<HullPoint> hull_points_;
  std::vector<std::size_t> hull_offsets_{0};
};

// Accuracy-loss scores of the first `compressible` rows of keys/values when every
// compressible token is stored at `dim` columns:
//   P  = softmax(Q K^T / sqrt(D)) over all rows (window included)
//   P' = the same with compressible keys replaced by K P_K P_K^T at rank dim
//   E  = |P' - P| * ||V|| + P * ||V - V P_V P_V^T||,  L = column sums of E.
// dim == 0 gives L = sum_q 2 P ||V||; dim == D gives zeros. Window rows never change.
// With GQA, pass every query head of the group stacked into `queries`.
std::vector<double> loss_scores(const Matrix& keys, const Matrix& values, const Matrix& queries,
                                std::size_t compressible, std::uint32_t dim, const ProjectionBasis& basis_keys,
                                const ProjectionBasis& basis_values);

// Same with the rank given as a ratio of D (rounded to nearest).
std::vector<double> loss_scores_at_ratio(const Matrix& keys, const Matrix& values, const Matrix& queries,
                                         std::size_t compressible, double ratio, const ProjectionBasis& basis_keys,
                                         const ProjectionBasis& basis_values);

LossTable build_loss_table(const Matrix& keys, const Matrix& values, const Matrix& queries, std::size_t compressible,
                           const RatioSet& ratios, const ProjectionBasis& basis_keys,
                           const ProjectionBasis& basis_values);

// Joint-head table: one basis over the concatenated KV heads (width H_kv * D);
// each token's loss sums the per-head errors of every query head. `queries[j]`
// holds the stacked queries that read KV head j. `ratios` is over the joint width.
LossTable build_joint_loss_table(std::span<const Matrix> keys, std::span<const Matrix> values,
                                 std::span<const Matrix> queries, std::size_t compressible, const RatioSet& ratios,
                                 const ProjectionBasis& basis_keys, const ProjectionBasis& basis_values);

// Eviction statistics over the compressible tokens: sum_q P (attention-sum,
// the SnapKV criterion) and sum_q P ||V|| (value-weighted).
struct EvictionScores {
  std::vector<double> attention_sum;
  std::vector<double> value_weighted;
};

EvictionScores snapkv_scores(const Matrix& keys, const Matrix& values, const Matrix& queries,
                             std::size_t compressible);

}  // namespace mixdim
