#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mixdim/cache.hpp"
#include "mixdim/linalg.hpp"

namespace mixdim {

struct GqaConfig {
  std::size_t num_query_heads = 1;
  std::size_t num_kv_heads = 1;
  std::size_t head_dim = 0;

  // Throws ContractError unless counts are positive and H is a multiple of H_kv.
  void validate() const;
  std::size_t group_size() const noexcept { return num_query_heads / num_kv_heads; }
  std::size_t kv_head_for(std::size_t query_head) const noexcept { return query_head / group_size(); }
};

struct AttentionOutput {
  Matrix output;                         // M x D
  std::optional<MatrixD> probabilities;  // M x N
};

// softmax(Q K^T / sqrt(D)) V, evaluated in double.
AttentionOutput full_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                               bool keep_probabilities = false);

// Exact attention of one query over a group-packed cache for KV head `kv_head`.
// Group logits are concatenated and softmaxed jointly with the window, so the
// result equals full attention over the per-token reconstructions K P P^T.
// Rows of `appended_keys`/`appended_values` (decode-time tokens) join the
// softmax at full rank.
std::vector<float> mixed_rank_attention(std::span<const float> query, const CompressedCache& cache,
                                        std::size_t kv_head);
std::vector<float> mixed_rank_attention(std::span<const float> query, const CompressedCache& cache,
                                        std::size_t kv_head, const Matrix& appended_keys,
                                        const Matrix& appended_values);

// Row-wise convenience over a block of queries.
Matrix mixed_rank_attention(const Matrix& queries, const CompressedCache& cache, std::size_t kv_head);

}  // namespace mixdim
