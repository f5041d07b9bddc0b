#include "mixdim/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "byte_io.hpp"

namespace mixdim {

void SyntheticSpec::validate() const {
  if (num_tokens == 0 || window == 0 || head_dim == 0 || num_query_heads == 0 || num_kv_heads == 0)
    throw ConfigError("synthetic spec: counts must be positive");
  if (num_query_heads % num_kv_heads != 0) throw ConfigError("synthetic spec: H must be divisible by H_kv");
  if (needle_count + window > num_tokens) throw ConfigError("synthetic spec: needle_count + window exceeds N");
  if (!(needle_gain >= 0.0) || !(noise_scale > 0.0))
    throw ConfigError("synthetic spec: needle_gain must be >= 0 and noise_scale > 0");
  if (!(mid_importance_fraction >= 0.0 && mid_importance_fraction <= 1.0))
    throw ConfigError("synthetic spec: mid_importance_fraction outside [0, 1]");
}

namespace {

// Columns of a Haar-ish random orthonormal matrix (Gram-Schmidt on Gaussian columns).
MatrixD random_orthonormal(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixD q(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> v(d);
    for (double& x : v) x = normal(rng);
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t k = 0; k < j; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < d; ++i) proj += v[i] * q(i, k);
        for (std::size_t i = 0; i < d; ++i) v[i] -= proj * q(i, k);
      }
    double norm = 0.0;
    for (const double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < d; ++i) q(i, j) = v[i] / norm;
  }
  return q;
}

// Rows drawn from basis * diag(spectrum) * z + noise * eps.
Matrix low_rank_rows(std::size_t rows, const MatrixD& basis, std::span<const double> spectrum, double noise,
                     std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = basis.rows();
  Matrix out(rows, d);
  std::vector<double> z(d);
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t k = 0; k < d; ++k) z[k] = spectrum[k] * normal(rng);
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += basis(i, k) * z[k];
      out(t, i) = static_cast<float>(acc + noise * normal(rng));
    }
  }
  return out;
}

}  // namespace

SyntheticLayer generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = spec.head_dim;
  const std::size_t n = spec.num_tokens;
  const std::size_t total = n + spec.window;
  const std::size_t g = spec.num_query_heads / spec.num_kv_heads;
  const double sqrt_d = std::sqrt(static_cast<double>(d));
  const auto mid_count = std::min<std::size_t>(
      n - spec.needle_count,
      static_cast<std::size_t>(std::llround(spec.mid_importance_fraction * static_cast<double>(n))));

  // Energy decays over roughly the leading eighth of the dimensions.
  const double decay = std::max(1.0, static_cast<double>(d) / 8.0);
  std::vector<double> spectrum(d);
  for (std::size_t k = 0; k < d; ++k) spectrum[k] = std::exp(-static_cast<double>(k) / decay);

  SyntheticLayer out;
  LayerCache& layer = out.layer;
  layer.config = {spec.num_query_heads, spec.num_kv_heads, d};
  layer.window = spec.window;
  layer.window_queries.resize(spec.num_query_heads);
  if (spec.probe_count > 0) layer.probe_queries.resize(spec.num_query_heads);

  for (std::size_t j = 0; j < spec.num_kv_heads; ++j) {
    const MatrixD key_basis = random_orthonormal(d, rng);
    const MatrixD value_basis = random_orthonormal(d, rng);
    Matrix keys = low_rank_rows(total, key_basis, spectrum, spec.noise_scale, rng);
    Matrix values = low_rank_rows(total, value_basis, spectrum, spec.noise_scale, rng);

    // Query direction: a unit vector inside the two leading key directions.
    std::vector<double> dir(d);
    for (std::size_t i = 0; i < d; ++i) dir[i] = (key_basis(i, 0) + key_basis(i, 1)) / std::sqrt(2.0);

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0U);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::uint32_t> needles(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.needle_count));
    std::vector<std::uint32_t> mids(order.begin() + static_cast<std::ptrdiff_t>(spec.needle_count),
                                    order.begin() + static_cast<std::ptrdiff_t>(spec.needle_count + mid_count));
    std::sort(needles.begin(), needles.end());
    std::sort(mids.begin(), mids.end());
    // A key shifted by gain * dir gains `gain` logits against a query sqrt(D) * dir.
    for (const std::uint32_t t : needles)
      for (std::size_t i = 0; i < d; ++i) keys(t, i) += static_cast<float>(spec.needle_gain * dir[i]);
    for (const std::uint32_t t : mids)
      for (std::size_t i = 0; i < d; ++i) keys(t, i) += static_cast<float>(0.5 * spec.needle_gain * dir[i]);

    const auto make_queries = [&](std::size_t rows) {
      Matrix q(rows, d);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i) q(r, i) = static_cast<float>(sqrt_d * dir[i] + normal(rng));
      return q;
    };
    for (std::size_t h = j * g; h < (j + 1) * g; ++h) {
      layer.window_queries[h] = make_queries(spec.window);
      if (spec.probe_count > 0) layer.probe_queries[h] = make_queries(spec.probe_count);
    }
    layer.keys.push_back(std::move(keys));
    layer.values.push_back(std::move(values));
    out.needles.push_back(std::move(needles));
    out.mids.push_back(std::move(mids));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint8_t kQueryMagic[4] = {'M', 'D', 'K', 'Q'};
}

std::vector<std::uint8_t> serialize_queries(const LayerCache& layer) {
  layer.validate();
  const std::size_t probes = layer.probe_queries.empty() ? 0 : layer.probe_queries.front().rows();
  detail::ByteWriter w;
  for (const std::uint8_t b : kQueryMagic) w.u8(b);
  w.u16(kQueryFormatVersion);
  w.u16(static_cast<std::uint16_t>(layer.config.num_query_heads));
  w.u16(static_cast<std::uint16_t>(layer.config.head_dim));
  w.u32(static_cast<std::uint32_t>(layer.window_queries.front().rows()));
  w.u32(static_cast<std::uint32_t>(probes));
  for (std::size_t h = 0; h < layer.config.num_query_heads; ++h) {
    if (layer.window_queries[h].rows() != layer.window_queries.front().rows() ||
        (probes > 0 && layer.probe_queries[h].rows() != probes))
      throw ContractError("serialize_queries: query heads differ in row count");
    w.f32s(layer.window_queries[h]);
    if (probes > 0) w.f32s(layer.probe_queries[h]);
  }
  detail::append_crc(w);
  return w.take();
}

void deserialize_queries(std::span<const std::uint8_t> bytes, LayerCache& layer) {
  detail::ByteReader r(bytes);
  for (const std::uint8_t b : kQueryMagic)
    if (r.u8() != b) throw FormatError("bad magic", 0);
  const std::size_t version_at = r.offset();
  if (r.u16() != kQueryFormatVersion) throw FormatError("unsupported version", version_at);
  detail::ByteReader body(detail::checked_body(bytes, r.offset()));
  body.u32();
  body.u16();
  std::size_t at = body.offset();
  const std::size_t heads = body.u16();
  const std::size_t d = body.u16();
  const std::size_t rows = body.u32();
  const std::size_t probes = body.u32();
  if (heads == 0 || d == 0 || rows == 0) throw FormatError("empty query header", at);
  layer.window_queries.clear();
  layer.probe_queries.clear();
  for (std::size_t h = 0; h < heads; ++h) {
    layer.window_queries.push_back(body.f32s(rows, d));
    if (probes > 0) layer.probe_queries.push_back(body.f32s(probes, d));
  }
  if (body.remaining() != 0) throw FormatError("trailing bytes before checksum", body.offset());
  layer.config.num_query_heads = heads;
  layer.config.head_dim = d;
}

CompressedCache raw_layer_cache(const LayerCache& layer) {
  layer.validate();
  const std::size_t n = layer.num_tokens();
  const std::size_t d = layer.config.head_dim;
  const std::vector<std::uint32_t> candidates{0, static_cast<std::uint32_t>(d)};
  const std::vector<std::uint32_t> dims(n, static_cast<std::uint32_t>(d));
  const ProjectionBasis none = ProjectionBasis::empty(d);
  CompressedCache c;
  c.num_kv_heads = layer.config.num_kv_heads;
  c.head_dim = d;
  c.window = layer.window;
  c.num_tokens = n;
  c.ratio_dims = candidates;
  for (std::size_t j = 0; j < c.num_kv_heads; ++j)
    c.heads.push_back(build_head_cache(layer.keys[j].rows_range(0, n), layer.values[j].rows_range(0, n), dims,
                                       candidates, none, none, layer.keys[j].rows_range(n, layer.window),
                                       layer.values[j].rows_range(n, layer.window)));
  return c;
}

LayerCache layer_from_raw_cache(const CompressedCache& cache, std::size_t num_query_heads) {
  if (cache.layout != CacheLayout::headwise) throw DataIntegrityError("raw layer must be head-wise");
  LayerCache layer;
  layer.config = {num_query_heads, cache.num_kv_heads, cache.head_dim};
  layer.window = cache.window;
  const std::size_t n = cache.num_tokens;
  for (const auto& head : cache.heads) {
    if (head.groups.size() != 1 || head.groups.front().dim != cache.head_dim || head.groups.front().size() != n)
      throw DataIntegrityError("raw layer must hold every token at full dim");
    const Matrix keys[] = {head.groups.front().keys, head.window_keys};
    const Matrix values[] = {head.groups.front().values, head.window_values};
    layer.keys.push_back(vstack<float>(keys));
    layer.values.push_back(vstack<float>(values));
  }
  return layer;
}

void write_layer(const std::filesystem::path& cache_path, const std::filesystem::path& query_path,
                 const LayerCache& layer) {
  write_file_atomic(cache_path, serialize(raw_layer_cache(layer)));
  write_file_atomic(query_path, serialize_queries(layer));
}

LayerCache read_layer(const std::filesystem::path& cache_path, const std::filesystem::path& query_path) {
  LayerCache queries;
  deserialize_queries(read_file(query_path), queries);
  LayerCache layer = layer_from_raw_cache(deserialize(read_file(cache_path)), queries.config.num_query_heads);
  if (queries.config.head_dim != layer.config.head_dim)
    throw DataIntegrityError("query file head_dim differs from the cache");
  layer.window_queries = std::move(queries.window_queries);
  layer.probe_queries = std::move(queries.probe_queries);
  try {
    layer.validate();
  } catch (const ContractError& e) {
    throw DataIntegrityError(std::string("inconsistent layer files: ") + e.what());
  }
  return layer;
}

}  // namespace mixdim
