#include "mixdim/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mixdim {

void GqaConfig::validate() const {
  if (num_query_heads == 0 || num_kv_heads == 0 || head_dim == 0)
    throw ContractError("GQA config: counts must be positive");
  if (num_query_heads % num_kv_heads != 0)
    throw ContractError("GQA config: query heads not divisible by KV heads");
}

AttentionOutput full_attention(const Matrix& queries, const Matrix& keys, const Matrix& values,
                               bool keep_probabilities) {
  if (keys.rows() == 0) throw ContractError("full_attention: empty cache");
  if (queries.cols() != keys.cols() || values.rows() != keys.rows())
    throw ContractError("full_attention: shape mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  MatrixD logits = matmul_bt(queries.cast<double>(), keys);
  for (double& x : logits.data()) x *= scale;
  MatrixD probs = softmax_rows(logits);

  AttentionOutput out;
  out.output = Matrix(queries.rows(), values.cols());
  std::vector<double> acc(values.cols());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < keys.rows(); ++t) {
      const double p = probs(i, t);
      const auto v = values.row(t);
      for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += p * v[c];
    }
    for (std::size_t c = 0; c < acc.size(); ++c) out.output(i, c) = static_cast<float>(acc[c]);
  }
  if (keep_probabilities) out.probabilities = std::move(probs);
  return out;
}

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

double dot(std::span<const double> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * static_cast<double>(b[i]);
  return acc;
}

}  // namespace

std::vector<float> mixed_rank_attention(std::span<const float> query, const CompressedCache& cache,
                                        std::size_t kv_head, const Matrix& appended_keys,
                                        const Matrix& appended_values) {
  const std::size_t d = cache.head_dim;
  const std::size_t width = cache.width();
  const bool joint = cache.layout == CacheLayout::joint;
  if (query.size() != d) throw ContractError("mixed_rank_attention: query width differs from head_dim");
  if (kv_head >= cache.num_kv_heads) throw ContractError("mixed_rank_attention: KV head out of range");
  if (appended_keys.rows() != appended_values.rows() ||
      (appended_keys.rows() > 0 && (appended_keys.cols() != d || appended_values.cols() != d)))
    throw ContractError("mixed_rank_attention: appended tokens have the wrong shape");

  const HeadCache& head = cache.heads.at(joint ? 0 : kv_head);
  // Column block of stored rows (and row block of the bases) owned by this KV head.
  const std::size_t off = joint ? kv_head * d : 0;
  const std::size_t max_rank = head.basis_keys.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  std::size_t total = head.window_keys.rows() + appended_keys.rows();
  for (const auto& g : head.groups) {
    if (g.dim == 0 || (g.dim != width && g.dim > max_rank) || g.keys.cols() != g.dim ||
        g.values.cols() != g.dim || g.keys.rows() != g.size() || g.values.rows() != g.size())
      throw DataIntegrityError("packed group of dim " + std::to_string(g.dim) + " does not match its basis");
    total += g.size();
  }
  if (total == 0) throw ContractError("mixed_rank_attention: empty cache");

  // Query projected into the key basis: q_hat[j] = sum_i q[i] * P_K[off + i, j].
  std::vector<double> q_hat(max_rank, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const auto prow = head.basis_keys.row(off + i);
    for (std::size_t j = 0; j < max_rank; ++j) q_hat[j] += static_cast<double>(query[i]) * prow[j];
  }

  std::vector<double> logits;
  logits.reserve(total);
  for (const auto& g : head.groups) {
    for (std::size_t t = 0; t < g.size(); ++t) {
      const auto row = g.keys.row(t);
      const double s = g.dim == width ? dot(query, row.subspan(off, d))
                                      : dot(std::span<const double>(q_hat.data(), g.dim), row);
      logits.push_back(s * scale);
    }
  }
  for (std::size_t t = 0; t < head.window_keys.rows(); ++t)
    logits.push_back(dot(query, head.window_keys.row(t).subspan(off, d)) * scale);
  for (std::size_t t = 0; t < appended_keys.rows(); ++t)
    logits.push_back(dot(query, appended_keys.row(t)) * scale);

  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& x : logits) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : logits) x /= sum;

  std::vector<double> out(d, 0.0);
  std::vector<double> latent(max_rank);
  std::size_t at = 0;
  for (const auto& g : head.groups) {
    if (g.dim == width) {
      for (std::size_t t = 0; t < g.size(); ++t, ++at) {
        const auto row = g.values.row(t);
        for (std::size_t c = 0; c < d; ++c) out[c] += logits[at] * row[off + c];
      }
      continue;
    }
    std::fill(latent.begin(), latent.end(), 0.0);
    for (std::size_t t = 0; t < g.size(); ++t, ++at) {
      const auto row = g.values.row(t);
      for (std::size_t j = 0; j < g.dim; ++j) latent[j] += logits[at] * row[j];
    }
    for (std::size_t c = 0; c < d; ++c) {
      const auto prow = head.basis_values.row(off + c);
      double acc = 0.0;
      for (std::size_t j = 0; j < g.dim; ++j) acc += latent[j] * prow[j];
      out[c] += acc;
    }
  }
  for (std::size_t t = 0; t < head.window_values.rows(); ++t, ++at) {
    const auto row = head.window_values.row(t);
    for (std::size_t c = 0; c < d; ++c) out[c] += logits[at] * row[off + c];
  }
  for (std::size_t t = 0; t < appended_values.rows(); ++t, ++at) {
    const auto row = appended_values.row(t);
    for (std::size_t c = 0; c < d; ++c) out[c] += logits[at] * row[c];
  }

  return std::vector<float>(out.begin(), out.end());
}

std::vector<float> mixed_rank_attention(std::span<const float> query, const CompressedCache& cache,
                                        std::size_t kv_head) {
  static const Matrix kNone;
  return mixed_rank_attention(query, cache, kv_head, kNone, kNone);
}

Matrix mixed_rank_attention(const Matrix& queries, const CompressedCache& cache, std::size_t kv_head) {
  Matrix out(queries.rows(), cache.head_dim);
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    const auto row = mixed_rank_attention(queries.row(i), cache, kv_head);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace mixdim
