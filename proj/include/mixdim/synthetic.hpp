#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mixdim/io.hpp"
#include "mixdim/pipeline.hpp"

namespace mixdim {

// Desk-scale stand-in for a long-context prompt: low-rank Gaussian keys and
// values, a handful of "needle" tokens whose keys point along the window
// queries' direction, and a band of mid-importance tokens with partial
// alignment.
struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t num_tokens = 1024;  // compressible prefix N; the window follows it
  std::size_t window = 32;
  std::size_t head_dim = 64;
  std::size_t num_query_heads = 8;
  std::size_t num_kv_heads = 2;
  std::size_t needle_count = 8;
  double needle_gain = 6.0;   // logit boost a needle receives from window queries
  double noise_scale = 0.3;   // isotropic noise added to every key and value
  double mid_importance_fraction = 0.1;
  std::size_t probe_count = 0;  // held-out probe queries per query head

  // Throws ConfigError if counts are inconsistent.
  void validate() const;
};

struct SyntheticLayer {
  LayerCache layer;
  std::vector<std::vector<std::uint32_t>> needles;  // per KV head, ascending positions
  std::vector<std::vector<std::uint32_t>> mids;     // per KV head
};

SyntheticLayer generate_synthetic(const SyntheticSpec& spec);

// Query file (".queries"): magic "MDKQ", u16 version 1, u16 H, u16 D,
// u32 window rows, u32 probe rows, then per query head the window rows and the
// probe rows as f32 row-major, then CRC32 of everything before it.
inline constexpr std::uint16_t kQueryFormatVersion = 1;
std::vector<std::uint8_t> serialize_queries(const LayerCache& layer);
void deserialize_queries(std::span<const std::uint8_t> bytes, LayerCache& layer);

// A raw layer is stored as a .mdkv cache holding every compressible token at
// full dim, next to a .queries file.
CompressedCache raw_layer_cache(const LayerCache& layer);
LayerCache layer_from_raw_cache(const CompressedCache& cache, std::size_t num_query_heads);

void write_layer(const std::filesystem::path& cache_path, const std::filesystem::path& query_path,
                 const LayerCache& layer);
LayerCache read_layer(const std::filesystem::path& cache_path, const std::filesystem::path& query_path);

}  // namespace mixdim
