#include "mixdim/scoring.hpp"

#include <cmath>
#include <ostream>
#include <string>

namespace mixdim {

std::vector<HullPoint> prune_hull(std::span<const std::uint32_t> dims, std::span<const double> losses) {
  if (dims.size() != losses.size()) throw ContractError("prune_hull: dims and losses differ in length");
  std::vector<HullPoint> hull;
  double running = 0.0;
  for (std::size_t j = 0; j < dims.size(); ++j) {
    if (j > 0 && dims[j] <= dims[j - 1]) throw ContractError("prune_hull: dims not strictly ascending");
    running = j == 0 ? losses[j] : std::min(running, losses[j]);
    const HullPoint p{dims[j], running};
    // Pop while the last point lies on or above the chord from its predecessor to p.
    while (hull.size() >= 2) {
      const HullPoint& a = hull[hull.size() - 2];
      const HullPoint& b = hull.back();
      const double cross = (static_cast<double>(b.dim) - a.dim) * (p.loss - a.loss) -
                           (b.loss - a.loss) * (static_cast<double>(p.dim) - a.dim);
      if (cross > 0.0) break;
      hull.pop_back();
    }
    hull.push_back(p);
  }
  return hull;
}

LossTable::LossTable(std::vector<std::uint32_t> dims, std::size_t num_tokens, std::vector<double> losses)
    : dims_(std::move(dims)), num_tokens_(num_tokens), raw_(std::move(losses)) {
  if (dims_.empty() || dims_.front() != 0) throw ContractError("loss table: candidate dims must start at 0");
  for (std::size_t j = 1; j < dims_.size(); ++j)
    if (dims_[j] <= dims_[j - 1]) throw ContractError("loss table: candidate dims must strictly increase");
  if (raw_.size() != num_tokens_ * dims_.size()) throw ContractError("loss table: size mismatch");
  for (const double l : raw_)
    if (!std::isfinite(l) || l < 0.0) throw ContractError("loss table: losses must be finite and non-negative");

  const std::size_t k = dims_.size();
  repaired_.resize(raw_.size());
  hull_offsets_.reserve(num_tokens_ + 1);
  for (std::size_t t = 0; t < num_tokens_; ++t) {
    const std::span<const double> row(raw_.data() + t * k, k);
    double running = row[0];
    for (std::size_t j = 0; j < k; ++j) {
      running = std::min(running, row[j]);
      repaired_[t * k + j] = running;
    }
    const auto h = prune_hull(dims_, row);
    hull_points_.insert(hull_points_.end(), h.begin(), h.end());
    hull_offsets_.push_back(hull_points_.size());
  }
}

double LossTable::loss_at(std::size_t token, std::uint32_t dim) const {
  const auto it = std::lower_bound(dims_.begin(), dims_.end(), dim);
  if (it == dims_.end() || *it != dim) throw ContractError("loss table: dim " + std::to_string(dim) + " is not a candidate");
  return repaired(token, static_cast<std::size_t>(it - dims_.begin()));
}

LossTable LossTable::concat(std::span<const LossTable> parts) {
  if (parts.empty()) throw ContractError("loss table concat: no parts");
  std::vector<double> losses;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.dims_ != parts.front().dims_) throw ContractError("loss table concat: candidate dims differ");
    losses.insert(losses.end(), p.raw_.begin(), p.raw_.end());
    n += p.num_tokens_;
  }
  return LossTable(parts.front().dims_, n, std::move(losses));
}

void LossTable::write_csv(std::ostream& out, bool with_header, long head) const {
  if (with_header) out << (head >= 0 ? "head,token_index,dim,loss\n" : "token_index,dim,loss\n");
  const auto old_precision = out.precision(17);
  for (std::size_t t = 0; t < num_tokens_; ++t)
    for (std::size_t j = 0; j < dims_.size(); ++j) {
      if (head >= 0) out << head << ',';
      out << t << ',' << dims_[j] << ',' << raw(t, j) << '\n';
    }
  out.precision(old_precision);
}

namespace {

// One query group reading one KV head. `column_offset` locates the head's block
// inside a joint reconstruction.
struct ScoringBlock {
  const Matrix* keys;
  const Matrix* values;
  const Matrix* queries;
  std::size_t column_offset;
};

// Probabilities and value norms shared by every candidate dim.
struct BlockContext {
  MatrixD probs;                    // M x N_total
  std::vector<double> value_norms;  // N_total
};

MatrixD attention_probs(const Matrix& queries, const Matrix& keys) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
  MatrixD logits = matmul_bt(queries.cast<double>(), keys);
  for (double& x : logits.data()) x *= scale;
  return softmax_rows(logits);
}

void check_block(const ScoringBlock& b, std::size_t compressible) {
  const Matrix& k = *b.keys;
  if (k.rows() == 0 || b.values->rows() != k.rows() || b.values->cols() != k.cols() ||
      b.queries->cols() != k.cols() || b.queries->rows() == 0)
    throw ContractError("scoring: inconsistent key/value/query shapes");
  if (compressible > k.rows()) throw ContractError("scoring: more compressible tokens than rows");
}

BlockContext make_context(const ScoringBlock& b) {
  return {attention_probs(*b.queries, *b.keys), row_norms(*b.values)};
}

// Rows [0, compressible) of each block's matrix, side by side.
Matrix compressible_joint(std::span<const ScoringBlock> blocks, std::size_t compressible, bool values) {
  std::vector<Matrix> parts;
  for (const auto& b : blocks) parts.push_back((values ? *b.values : *b.keys).rows_range(0, compressible));
  return parts.size() == 1 ? std::move(parts.front()) : hstack<float>(parts);
}

std::vector<double> score_column(std::span<const ScoringBlock> blocks, std::span<const BlockContext> ctx,
                                 std::size_t compressible, std::uint32_t dim, std::size_t width,
                                 const ProjectionBasis& basis_keys, const ProjectionBasis& basis_values) {
  std::vector<double> loss(compressible, 0.0);
  if (dim == width) return loss;

  if (dim == 0) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const MatrixD& p = ctx[b].probs;
      for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t t = 0; t < compressible; ++t) loss[t] += 2.0 * (p(i, t) * ctx[b].value_norms[t]);
    }
    return loss;
  }

  if (dim > basis_keys.max_rank || dim > basis_values.max_rank)
    throw ContractError("scoring: dim " + std::to_string(dim) + " exceeds the fitted basis rank");
  if (basis_keys.head_dim != width || basis_values.head_dim != width)
    throw ContractError("scoring: basis width does not match the cache");

  const MatrixD keys_rec = project_reconstruct(compressible_joint(blocks, compressible, false), basis_keys, dim);
  const MatrixD values_rec = project_reconstruct(compressible_joint(blocks, compressible, true), basis_values, dim);

  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const ScoringBlock& blk = blocks[b];
    const Matrix& keys = *blk.keys;
    const Matrix& values = *blk.values;
    const std::size_t d = keys.cols();
    const std::size_t total = keys.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    // Compressed keys for the compressible prefix, raw keys for the window.
    MatrixD keys_prime(total, d);
    for (std::size_t t = 0; t < total; ++t)
      for (std::size_t c = 0; c < d; ++c)
        keys_prime(t, c) = t < compressible ? keys_rec(t, blk.column_offset + c) : static_cast<double>(keys(t, c));
    MatrixD logits = matmul_bt(blk.queries->cast<double>(), keys_prime);
    for (double& x : logits.data()) x *= scale;
    const MatrixD probs_prime = softmax_rows(logits);

    std::vector<double> value_err(compressible);
    for (std::size_t t = 0; t < compressible; ++t) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = static_cast<double>(values(t, c)) - values_rec(t, blk.column_offset + c);
        acc += diff * diff;
      }
      value_err[t] = std::sqrt(acc);
    }

    const MatrixD& p = ctx[b].probs;
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t t = 0; t < compressible; ++t)
        loss[t] += std::abs(probs_prime(i, t) - p(i, t)) * ctx[b].value_norms[t] + p(i, t) * value_err[t];
  }
  return loss;
}

LossTable build_table(std::span<const ScoringBlock> blocks, std::size_t compressible, const RatioSet& ratios,
                      std::size_t width, const ProjectionBasis& basis_keys, const ProjectionBasis& basis_values) {
  if (ratios.head_dim() != width) throw ContractError("build_loss_table: ratio set is for a different width");
  std::vector<BlockContext> ctx;
  for (const auto& b : blocks) {
    check_block(b, compressible);
    ctx.push_back(make_context(b));
  }
  const auto& dims = ratios.dims();
  std::vector<double> losses(compressible * dims.size());
  for (std::size_t j = 0; j < dims.size(); ++j) {
    const auto col = score_column(blocks, ctx, compressible, dims[j], width, basis_keys, basis_values);
    for (std::size_t t = 0; t < compressible; ++t) losses[t * dims.size() + j] = col[t];
  }
  return LossTable(dims, compressible, std::move(losses));
}

}  // namespace

std::vector<double> loss_scores(const Matrix& keys, const Matrix& values, const Matrix& queries,
                                std::size_t compressible, std::uint32_t dim, const ProjectionBasis& basis_keys,
                                const ProjectionBasis& basis_values) {
  const ScoringBlock block{&keys, &values, &queries, 0};
  check_block(block, compressible);
  if (dim > keys.cols()) throw ContractError("loss_scores: dim exceeds head_dim");
  const BlockContext ctx = make_context(block);
  return score_column(std::span(&block, 1), std::span(&ctx, 1), compressible, dim, keys.cols(), basis_keys,
                      basis_values);
}

std::vector<double> loss_scores_at_ratio(const Matrix& keys, const Matrix& values, const Matrix& queries,
                                         std::size_t compressible, double ratio, const ProjectionBasis& basis_keys,
                                         const ProjectionBasis& basis_values) {
  return loss_scores(keys, values, queries, compressible, ratio_to_dim(ratio, keys.cols()), basis_keys,
                     basis_values);
}

LossTable build_loss_table(const Matrix& keys, const Matrix& values, const Matrix& queries, std::size_t compressible,
                           const RatioSet& ratios, const ProjectionBasis& basis_keys,
                           const ProjectionBasis& basis_values) {
  const ScoringBlock block{&keys, &values, &queries, 0};
  return build_table(std::span(&block, 1), compressible, ratios, keys.cols(), basis_keys, basis_values);
}

LossTable build_joint_loss_table(std::span<const Matrix> keys, std::span<const Matrix> values,
                                 std::span<const Matrix> queries, std::size_t compressible, const RatioSet& ratios,
                                 const ProjectionBasis& basis_keys, const ProjectionBasis& basis_values) {
  if (keys.empty() || keys.size() != values.size() || keys.size() != queries.size())
    throw ContractError("build_joint_loss_table: head lists differ in length");
  std::vector<ScoringBlock> blocks;
  std::size_t offset = 0;
  for (std::size_t h = 0; h < keys.size(); ++h) {
    if (keys[h].cols() != keys.front().cols() || keys[h].rows() != keys.front().rows())
      throw ContractError("build_joint_loss_table: heads differ in shape");
    blocks.push_back({&keys[h], &values[h], &queries[h], offset});
    offset += keys[h].cols();
  }
  return build_table(blocks, compressible, ratios, offset, basis_keys, basis_values);
}

EvictionScores snapkv_scores(const Matrix& keys, const Matrix& values, const Matrix& queries,
                             std::size_t compressible) {
  const ScoringBlock block{&keys, &values, &queries, 0};
  check_block(block, compressible);
  const BlockContext ctx = make_context(block);
  EvictionScores out{std::vector<double>(compressible, 0.0), std::vector<double>(compressible, 0.0)};
  for (std::size_t i = 0; i < ctx.probs.rows(); ++i)
    for (std::size_t t = 0; t < compressible; ++t) {
      out.attention_sum[t] += ctx.probs(i, t);
      out.value_weighted[t] += ctx.probs(i, t) * ctx.value_norms[t];
    }
  return out;
}

}  // namespace mixdim
