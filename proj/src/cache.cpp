#include "mixdim/cache.hpp"

#include "byte_io.hpp"
#include "mixdim/io.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace mixdim {

HeadCache build_head_cache(const Matrix& keys, const Matrix& values, std::span<const std::uint32_t> dims,
                           std::span<const std::uint32_t> candidate_dims, const ProjectionBasis& basis_keys,
                           const ProjectionBasis& basis_values, Matrix window_keys, Matrix window_values) {
  const std::size_t width = keys.cols();
  if (values.rows() != keys.rows() || values.cols() != width)
    throw ContractError("build_cache: keys and values differ in shape");
  if (dims.size() != keys.rows()) throw ContractError("build_cache: allocation length does not match token count");
  if (window_keys.cols() != width || window_values.cols() != width || window_keys.rows() != window_values.rows())
    throw ContractError("build_cache: window shape mismatch");
  if (basis_keys.head_dim != width || basis_values.head_dim != width || basis_keys.max_rank != basis_values.max_rank)
    throw ContractError("build_cache: bases do not match the head width");

  HeadCache head;
  head.window_keys = std::move(window_keys);
  head.window_values = std::move(window_values);
  head.basis_keys = basis_keys.basis.cast<float>();
  head.basis_values = basis_values.basis.cast<float>();

  for (const std::uint32_t dim : candidate_dims) {
    if (dim == 0) continue;
    if (dim != width && dim > basis_keys.max_rank)
      throw ContractError("build_cache: candidate dim " + std::to_string(dim) + " exceeds stored basis rank");
    PackedGroup g;
    g.dim = dim;
    for (std::size_t t = 0; t < dims.size(); ++t)
      if (dims[t] == dim) g.indices.push_back(static_cast<std::uint32_t>(t));
    if (g.indices.empty()) continue;
    Matrix raw_k(g.size(), width), raw_v(g.size(), width);
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::ranges::copy(keys.row(g.indices[i]), raw_k.row(i).begin());
      std::ranges::copy(values.row(g.indices[i]), raw_v.row(i).begin());
    }
    if (dim == width) {
      g.keys = std::move(raw_k);
      g.values = std::move(raw_v);
    } else {
      g.keys = matmul(raw_k, head.basis_keys.columns(0, dim));
      g.values = matmul(raw_v, head.basis_values.columns(0, dim));
    }
    head.groups.push_back(std::move(g));
  }
  for (const std::uint32_t d : dims)
    if (!std::ranges::binary_search(candidate_dims, d))
      throw ContractError("build_cache: allocated dim " + std::to_string(d) + " is not a candidate");
  return head;
}

void validate(const CompressedCache& cache) {
  const std::size_t width = cache.width();
  const std::size_t expected_heads = cache.layout == CacheLayout::joint ? 1 : cache.num_kv_heads;
  if (cache.heads.size() != expected_heads) throw DataIntegrityError("cache head count mismatch");
  for (const auto& head : cache.heads) {
    if (head.window_keys.rows() != cache.window || head.window_values.rows() != cache.window ||
        head.window_keys.cols() != width || head.window_values.cols() != width)
      throw DataIntegrityError("window shape mismatch");
    if (head.basis_keys.rows() != width || head.basis_keys.cols() != cache.max_rank ||
        head.basis_values.rows() != width || head.basis_values.cols() != cache.max_rank)
      throw DataIntegrityError("basis shape mismatch");
    std::vector<bool> seen(cache.num_tokens, false);
    std::uint32_t prev_dim = 0;
    for (const auto& g : head.groups) {
      if (g.dim <= prev_dim) throw DataIntegrityError("groups not strictly ascending by dim");
      prev_dim = g.dim;
      if (g.dim != width && g.dim > cache.max_rank)
        throw DataIntegrityError("group dim " + std::to_string(g.dim) + " exceeds basis rank");
      if (g.keys.rows() != g.size() || g.values.rows() != g.size() || g.keys.cols() != g.dim ||
          g.values.cols() != g.dim)
        throw DataIntegrityError("group tensor shape mismatch");
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::uint32_t t = g.indices[i];
        if (t >= cache.num_tokens || seen[t] || (i > 0 && g.indices[i - 1] >= t))
          throw DataIntegrityError("group token indices invalid");
        seen[t] = true;
      }
    }
  }
}

std::vector<std::vector<std::uint32_t>> allocated_dims(const CompressedCache& cache) {
  std::vector<std::vector<std::uint32_t>> out;
  for (const auto& head : cache.heads) {
    std::vector<std::uint32_t> dims(cache.num_tokens, 0);
    for (const auto& g : head.groups)
      for (const std::uint32_t t : g.indices) dims[t] = g.dim;
    out.push_back(std::move(dims));
  }
  return out;
}

std::uint64_t headwise_projection_entries(std::size_t num_kv_heads, std::size_t head_dim, std::size_t max_rank) {
  return static_cast<std::uint64_t>(num_kv_heads) * 2 * head_dim * max_rank;
}

std::uint64_t joint_projection_entries(std::size_t num_kv_heads, std::size_t head_dim, std::size_t joint_max_rank) {
  return static_cast<std::uint64_t>(2) * num_kv_heads * head_dim * joint_max_rank;
}

MemoryFootprint memory_footprint(const CompressedCache& cache) {
  MemoryFootprint fp;
  const std::uint64_t width = cache.width();
  for (const auto& head : cache.heads) {
    HeadFootprint h;
    h.token_entries = 2 * static_cast<std::uint64_t>(cache.window) * width;
    for (const auto& g : head.groups) h.token_entries += 2 * static_cast<std::uint64_t>(g.dim) * g.size();
    h.projection_entries = 2 * width * head.basis_keys.cols();
    fp.token_entries += h.token_entries;
    fp.projection_entries += h.projection_entries;
    fp.per_head.push_back(h);
  }
  fp.total = fp.token_entries + fp.projection_entries;
  return fp;
}

// ---------------------------------------------------------------------------
// .mdkv encoding

namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'D', 'K', 'V'};

template <class T>
T checked_narrow(std::size_t v, const char* field) {
  if (v > std::numeric_limits<T>::max()) throw ContractError(std::string("serialize: ") + field + " out of range");
  return static_cast<T>(v);
}

}  // namespace

std::vector<std::uint8_t> serialize(const CompressedCache& cache) {
  if (cache.layout != CacheLayout::headwise) throw ContractError("serialize: joint-head caches have no .mdkv encoding");
  validate(cache);
  detail::ByteWriter w;
  for (const std::uint8_t b : kMagic) w.u8(b);
  w.u16(kCacheFormatVersion);
  w.u16(checked_narrow<std::uint16_t>(cache.num_kv_heads, "H_kv"));
  w.u16(checked_narrow<std::uint16_t>(cache.head_dim, "D"));
  w.u32(checked_narrow<std::uint32_t>(cache.window, "alpha"));
  w.u32(checked_narrow<std::uint32_t>(cache.num_tokens, "N"));
  w.u16(checked_narrow<std::uint16_t>(cache.max_rank, "r_max"));
  w.u8(checked_narrow<std::uint8_t>(cache.ratio_dims.size(), "num_ratios"));
  for (const std::uint32_t d : cache.ratio_dims) w.u16(checked_narrow<std::uint16_t>(d, "ratio dim"));

  for (const auto& head : cache.heads) {
    w.f32s(head.basis_keys);
    w.f32s(head.basis_values);
    w.f32s(head.window_keys);
    w.f32s(head.window_values);
    // One record per nonzero candidate dim so the reader knows the group count;
    // absent groups are written with count 0.
    for (const std::uint32_t dim : cache.ratio_dims) {
      if (dim == 0) continue;
      const auto it = std::ranges::find(head.groups, dim, &PackedGroup::dim);
      w.u16(static_cast<std::uint16_t>(dim));
      if (it == head.groups.end()) {
        w.u32(0);
        continue;
      }
      w.u32(checked_narrow<std::uint32_t>(it->size(), "group count"));
      for (const std::uint32_t t : it->indices) w.u32(t);
      w.f32s(it->keys);
      w.f32s(it->values);
    }
  }
  detail::append_crc(w);
  return w.take();
}

CompressedCache deserialize(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  for (const std::uint8_t b : kMagic)
    if (r.u8() != b) throw FormatError("bad magic", 0);
  const std::size_t version_at = r.offset();
  if (r.u16() != kCacheFormatVersion) throw FormatError("unsupported version", version_at);
  detail::ByteReader body(detail::checked_body(bytes, r.offset()));
  body.u32();
  body.u16();
  CompressedCache cache;
  cache.layout = CacheLayout::headwise;
  cache.num_kv_heads = body.u16();
  std::size_t at = body.offset();
  cache.head_dim = body.u16();
  if (cache.num_kv_heads == 0 || cache.head_dim == 0) throw FormatError("zero head count or head_dim", at);
  cache.window = body.u32();
  cache.num_tokens = body.u32();
  at = body.offset();
  cache.max_rank = body.u16();
  if (cache.max_rank >= cache.head_dim) throw FormatError("stored rank must be below head_dim", at);
  at = body.offset();
  const std::size_t num_ratios = body.u8();
  for (std::size_t i = 0; i < num_ratios; ++i) cache.ratio_dims.push_back(body.u16());
  if (num_ratios < 2 || cache.ratio_dims.front() != 0 || cache.ratio_dims.back() != cache.head_dim ||
      !std::ranges::is_sorted(cache.ratio_dims, std::less_equal<>{}) ||
      std::ranges::adjacent_find(cache.ratio_dims) != cache.ratio_dims.end() ||
      cache.ratio_dims[num_ratios - 2] != cache.max_rank)
    throw FormatError("invalid candidate dims", at);

  const std::size_t d = cache.head_dim;
  for (std::size_t h = 0; h < cache.num_kv_heads; ++h) {
    HeadCache head;
    head.basis_keys = body.f32s(d, cache.max_rank);
    head.basis_values = body.f32s(d, cache.max_rank);
    head.window_keys = body.f32s(cache.window, d);
    head.window_values = body.f32s(cache.window, d);
    std::vector<bool> seen(cache.num_tokens, false);
    for (const std::uint32_t dim : cache.ratio_dims) {
      if (dim == 0) continue;
      at = body.offset();
      if (body.u16() != dim) throw FormatError("unexpected group dim", at);
      const std::size_t count = body.u32();
      if (count > cache.num_tokens) throw FormatError("group larger than token count", at);
      if (count == 0) continue;
      PackedGroup g;
      g.dim = dim;
      g.indices.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        at = body.offset();
        const std::uint32_t t = body.u32();
        if (t >= cache.num_tokens || seen[t] || (i > 0 && g.indices.back() >= t))
          throw FormatError("invalid token index", at);
        seen[t] = true;
        g.indices.push_back(t);
      }
      g.keys = body.f32s(count, dim);
      g.values = body.f32s(count, dim);
      head.groups.push_back(std::move(g));
    }
    cache.heads.push_back(std::move(head));
  }
  if (body.remaining() != 0) throw FormatError("trailing bytes before checksum", body.offset());
  return cache;
}

void write_cache_file(const std::filesystem::path& path, const CompressedCache& cache) {
  write_file_atomic(path, serialize(cache));
}

CompressedCache read_cache_file(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace mixdim
