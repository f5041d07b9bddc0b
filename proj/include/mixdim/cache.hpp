#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mixdim/linalg.hpp"
#include "mixdim/pca.hpp"

namespace mixdim {

// Tokens sharing one compressed width, stored contiguously.
struct PackedGroup {
  std::uint32_t dim = 0;
  std::vector<std::uint32_t> indices;  // ascending original token positions
  Matrix keys;                         // count x dim
  Matrix values;                       // count x dim

  std::size_t size() const noexcept { return indices.size(); }
  friend bool operator==(const PackedGroup&, const PackedGroup&) = default;
};

struct HeadCache {
  Matrix window_keys;    // alpha x width, uncompressed
  Matrix window_values;  // alpha x width
  std::vector<PackedGroup> groups;  // ascending by dim, no dim 0
  Matrix basis_keys;     // width x max_rank, f32 copy of the fitted basis
  Matrix basis_values;

  friend bool operator==(const HeadCache&, const HeadCache&) = default;
};

enum class CacheLayout : std::uint8_t {
  headwise,  // one HeadCache per KV head, width = head_dim
  joint,     // a single HeadCache over the concatenated heads, width = num_kv_heads * head_dim
};

struct CompressedCache {
  CacheLayout layout = CacheLayout::headwise;
  std::size_t num_kv_heads = 0;
  std::size_t head_dim = 0;
  std::size_t window = 0;      // alpha
  std::size_t num_tokens = 0;  // compressible prefix length N; window occupies [N, N + alpha)
  std::size_t max_rank = 0;
  std::vector<std::uint32_t> ratio_dims;  // candidate dims in storage width units
  std::vector<HeadCache> heads;

  // Row width of stored tensors: head_dim, or num_kv_heads * head_dim when joint.
  std::size_t width() const noexcept {
    return layout == CacheLayout::joint ? num_kv_heads * head_dim : head_dim;
  }

  friend bool operator==(const CompressedCache&, const CompressedCache&) = default;
};

// Packs one head's compressible tokens by allocated dim. Dim-width tokens are
// stored raw, dim-0 tokens are dropped, everything else is projected through
// the nested basis prefix.
HeadCache build_head_cache(const Matrix& keys, const Matrix& values, std::span<const std::uint32_t> dims,
                           std::span<const std::uint32_t> candidate_dims, const ProjectionBasis& basis_keys,
                           const ProjectionBasis& basis_values, Matrix window_keys, Matrix window_values);

// Checks every structural invariant; throws DataIntegrityError on violation.
void validate(const CompressedCache& cache);

// Allocated dim of every compressible token (0 for evicted), per stored head.
std::vector<std::vector<std::uint32_t>> allocated_dims(const CompressedCache& cache);

struct HeadFootprint {
  std::uint64_t token_entries = 0;
  std::uint64_t projection_entries = 0;
};

// Scalar-entry accounting, K and V both counted.
struct MemoryFootprint {
  std::uint64_t token_entries = 0;
  std::uint64_t projection_entries = 0;
  std::uint64_t total = 0;
  std::vector<HeadFootprint> per_head;
};

MemoryFootprint memory_footprint(const CompressedCache& cache);

// Projection-matrix entries for a layer: 2 * D * r per KV head when head-wise,
// 2 * (H_kv D) * r_joint when the heads share one basis.
std::uint64_t headwise_projection_entries(std::size_t num_kv_heads, std::size_t head_dim, std::size_t max_rank);
std::uint64_t joint_projection_entries(std::size_t num_kv_heads, std::size_t head_dim, std::size_t joint_max_rank);

// .mdkv encoding. Only head-wise caches have a representation.
inline constexpr std::uint16_t kCacheFormatVersion = 1;
std::vector<std::uint8_t> serialize(const CompressedCache& cache);
CompressedCache deserialize(std::span<const std::uint8_t> bytes);

void write_cache_file(const std::filesystem::path& path, const CompressedCache& cache);
CompressedCache read_cache_file(const std::filesystem::path& path);

}  // namespace mixdim
