#include <doctest.h>

#include <filesystem>
#include <random>

#include "fixtures.hpp"
#include "mixdim/attention.hpp"
#include "mixdim/cache.hpp"

using namespace mixdim;

TEST_SUITE("cache") {

TEST_CASE("packing partitions tokens by dim") {
  std::mt19937_64 rng(1);
  auto f = testing::random_cache(rng, 50, 16, 4, 2, {0, 2, 4, 16});
  validate(f.cache);
  const auto dims = allocated_dims(f.cache);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(dims[j] == f.heads[j].dims);
    const auto& head = f.cache.heads[j];
    for (const auto& g : head.groups) {
      CHECK(g.dim != 0);
      CHECK(std::is_sorted(g.indices.begin(), g.indices.end()));
      if (g.dim == 16)
        for (std::size_t i = 0; i < g.size(); ++i)
          CHECK(std::ranges::equal(g.keys.row(i), f.heads[j].keys.row(g.indices[i])));
    }
  }
}

TEST_CASE("all full or all evicted") {
  std::mt19937_64 rng(2);
  auto f = testing::random_cache(rng, 10, 8, 2, 1, {0, 8});
  auto& h = f.heads[0];
  std::vector<std::uint32_t> full(10, 8), none(10, 0);
  const auto raw = build_head_cache(h.keys, h.values, full, f.cache.ratio_dims, h.basis_keys, h.basis_values,
                                    h.window_keys, h.window_values);
  REQUIRE(raw.groups.size() == 1);
  CHECK(raw.groups[0].keys == h.keys);
  CHECK(raw.groups[0].values == h.values);
  const auto empty = build_head_cache(h.keys, h.values, none, f.cache.ratio_dims, h.basis_keys, h.basis_values,
                                      h.window_keys, h.window_values);
  CHECK(empty.groups.empty());
  CHECK(empty.window_keys == h.window_keys);
  CHECK_THROWS_AS(build_head_cache(h.keys, h.values, std::vector<std::uint32_t>(9, 8), f.cache.ratio_dims,
                                   h.basis_keys, h.basis_values, h.window_keys, h.window_values),
                  ContractError);
  CHECK_THROWS_AS(build_head_cache(h.keys, h.values, std::vector<std::uint32_t>(10, 3), f.cache.ratio_dims,
                                   h.basis_keys, h.basis_values, h.window_keys, h.window_values),
                  ContractError);
}

TEST_CASE("projection overhead") {
  CHECK(headwise_projection_entries(8, 128, 32) == 65536);
  CHECK(joint_projection_entries(8, 128, 256) == 524288);
  for (std::size_t hkv : {2, 4, 8}) {
    const std::size_t d = 64;
    CHECK(joint_projection_entries(hkv, d, hkv * d / 4) == hkv * headwise_projection_entries(hkv, d, d / 4));
  }
}

TEST_CASE("footprint of a window-only cache") {
  std::mt19937_64 rng(3);
  auto f = testing::random_cache(rng, 12, 16, 8, 1, {0, 4, 16});
  auto& h = f.heads[0];
  f.cache.heads[0] = build_head_cache(h.keys, h.values, std::vector<std::uint32_t>(12, 0), f.cache.ratio_dims,
                                      h.basis_keys, h.basis_values, h.window_keys, h.window_values);
  const auto fp = memory_footprint(f.cache);
  CHECK(fp.total == 384);
  CHECK(fp.token_entries == 2 * 8 * 16);
  CHECK(fp.projection_entries == 2 * 16 * 4);
  REQUIRE(fp.per_head.size() == 1);
  CHECK(fp.per_head[0].token_entries + fp.per_head[0].projection_entries == fp.total);
}

TEST_CASE("footprint counts every stored scalar") {
  std::mt19937_64 rng(4);
  auto f = testing::random_cache(rng, 30, 16, 4, 3, {0, 2, 4, 16});
  std::uint64_t tokens = 0;
  for (const auto& h : f.heads)
    for (auto d : h.dims) tokens += 2 * d;
  const auto fp = memory_footprint(f.cache);
  CHECK(fp.token_entries == tokens + 3 * 2 * 4 * 16);
  CHECK(fp.projection_entries == headwise_projection_entries(3, 16, 4));
  CHECK(fp.total == fp.token_entries + fp.projection_entries);
}

TEST_CASE("serialization round trip") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<std::uint32_t> candidates =
        trial % 5 == 0 ? std::vector<std::uint32_t>{0, 8} : std::vector<std::uint32_t>{0, 1, 2, 8};
    auto f = testing::random_cache(rng, 5 + trial, 8, 1 + trial % 4, 1 + trial % 3, candidates);
    if (trial % 7 == 0)
      for (std::size_t j = 0; j < f.cache.num_kv_heads; ++j) f.cache.heads[j].groups.clear();
    const auto bytes = serialize(f.cache);
    const auto back = deserialize(bytes);
    CHECK(back == f.cache);
    CHECK(serialize(back) == bytes);
    CHECK(memory_footprint(back).total == memory_footprint(f.cache).total);
    std::mt19937_64 qrng(trial);
    const Matrix q = testing::random_matrix(2, 8, qrng);
    for (std::size_t j = 0; j < f.cache.num_kv_heads; ++j)
      CHECK(mixed_rank_attention(q, back, j) == mixed_rank_attention(q, f.cache, j));
  }
}

TEST_CASE("corruption is detected with an offset") {
  std::mt19937_64 rng(6);
  auto f = testing::random_cache(rng, 20, 8, 2, 2, {0, 2, 8});
  const auto bytes = serialize(f.cache);
  for (std::size_t at : {std::size_t{0}, std::size_t{4}, std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
    auto bad = bytes;
    bad[at] ^= 0x5a;
    try {
      deserialize(bad);
      FAIL("corruption at " << at << " went unnoticed");
    } catch (const FormatError& e) {
      CHECK(e.offset() < bytes.size());
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
  }
  auto short_stream = bytes;
  short_stream.resize(bytes.size() - 7);
  CHECK_THROWS_AS(deserialize(short_stream), FormatError);
  CHECK_THROWS_AS(deserialize(std::vector<std::uint8_t>{}), FormatError);
}

TEST_CASE("joint caches have no file encoding") {
  std::mt19937_64 rng(7);
  auto f = testing::random_cache(rng, 10, 8, 2, 1, {0, 8});
  f.cache.layout = CacheLayout::joint;
  CHECK_THROWS_AS(serialize(f.cache), ContractError);
}

TEST_CASE("file round trip") {
  std::mt19937_64 rng(8);
  auto f = testing::random_cache(rng, 16, 8, 2, 2, {0, 2, 8});
  const auto path = std::filesystem::temp_directory_path() / "mixdim_cache_test.mdkv";
  write_cache_file(path, f.cache);
  CHECK(read_cache_file(path) == f.cache);
  std::filesystem::remove(path);
}

TEST_CASE("validate catches broken structure") {
  std::mt19937_64 rng(9);
  auto f = testing::random_cache(rng, 30, 8, 2, 1, {0, 2, 8});
  auto broken = f.cache;
  REQUIRE(broken.heads[0].groups.size() >= 2);
  broken.heads[0].groups[1].indices[0] = broken.heads[0].groups[0].indices[0];
  CHECK_THROWS_AS(validate(broken), DataIntegrityError);
  broken = f.cache;
  std::swap(broken.heads[0].groups[0], broken.heads[0].groups[1]);
  CHECK_THROWS_AS(validate(broken), DataIntegrityError);
}

}
