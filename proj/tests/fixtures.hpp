#pragma once

#include <random>
#include <vector>

#include "mixdim/cache.hpp"
#include "mixdim/pca.hpp"
#include "support.hpp"

namespace testing {

struct HeadFixture {
  mixdim::Matrix keys, values, window_keys, window_values;
  mixdim::ProjectionBasis basis_keys, basis_values;
  std::vector<std::uint32_t> dims;
};

struct CacheFixture {
  mixdim::CompressedCache cache;
  std::vector<HeadFixture> heads;
};

// A head-wise cache with random data and dims drawn uniformly from `candidates`.
inline CacheFixture random_cache(std::mt19937_64& rng, std::size_t n, std::size_t d, std::size_t window,
                                 std::size_t kv_heads, std::vector<std::uint32_t> candidates) {
  CacheFixture f;
  auto& c = f.cache;
  c.num_kv_heads = kv_heads;
  c.head_dim = d;
  c.window = window;
  c.num_tokens = n;
  c.ratio_dims = candidates;
  c.max_rank = candidates.size() >= 2 ? candidates[candidates.size() - 2] : 0;
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  for (std::size_t j = 0; j < kv_heads; ++j) {
    HeadFixture h;
    h.keys = low_rank_matrix(n, d, rng);
    h.values = low_rank_matrix(n, d, rng);
    h.window_keys = random_matrix(window, d, rng);
    h.window_values = random_matrix(window, d, rng);
    h.basis_keys = c.max_rank == 0 ? mixdim::ProjectionBasis::empty(d) : mixdim::fit_basis(h.keys, c.max_rank);
    h.basis_values = c.max_rank == 0 ? mixdim::ProjectionBasis::empty(d) : mixdim::fit_basis(h.values, c.max_rank);
    for (std::size_t t = 0; t < n; ++t) h.dims.push_back(candidates[pick(rng)]);
    c.heads.push_back(mixdim::build_head_cache(h.keys, h.values, h.dims, candidates, h.basis_keys, h.basis_values,
                                               h.window_keys, h.window_values));
    f.heads.push_back(std::move(h));
  }
  return f;
}

}  // namespace testing

#include "mixdim/pipeline.hpp"

namespace testing {

inline mixdim::LayerCache random_layer(std::mt19937_64& rng, std::size_t n, std::size_t window, std::size_t d,
                                       std::size_t query_heads, std::size_t kv_heads) {
  mixdim::LayerCache layer;
  layer.config = {query_heads, kv_heads, d};
  layer.window = window;
  for (std::size_t j = 0; j < kv_heads; ++j) {
    layer.keys.push_back(low_rank_matrix(n + window, d, rng));
    layer.values.push_back(low_rank_matrix(n + window, d, rng));
  }
  for (std::size_t h = 0; h < query_heads; ++h) layer.window_queries.push_back(random_matrix(window, d, rng, 1.5));
  return layer;
}

}  // namespace testing
