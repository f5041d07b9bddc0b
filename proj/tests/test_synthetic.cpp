#include <doctest.h>

#include <filesystem>

#include "mixdim/scoring.hpp"
#include "mixdim/synthetic.hpp"

using namespace mixdim;

namespace {

// Ranks (0 = highest) of the needles of KV head 0 under the attention-sum score.
std::vector<std::size_t> needle_ranks(const SyntheticLayer& s) {
  const auto& layer = s.layer;
  const std::size_t n = layer.num_tokens();
  const auto scores = snapkv_scores(layer.keys[0], layer.values[0], layer.group_queries(0), n).attention_sum;
  std::vector<std::size_t> ranks;
  for (const auto t : s.needles[0]) {
    std::size_t above = 0;
    for (std::size_t u = 0; u < n; ++u) above += scores[u] > scores[t];
    ranks.push_back(above);
  }
  return ranks;
}

}  // namespace

TEST_SUITE("synthetic") {

TEST_CASE("spec validation") {
  SyntheticSpec s;
  s.num_query_heads = 6;
  s.num_kv_heads = 4;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = SyntheticSpec{};
  s.needle_count = s.num_tokens;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = SyntheticSpec{};
  s.noise_scale = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK_NOTHROW(SyntheticSpec{}.validate());
}

TEST_CASE("generation is deterministic in the seed") {
  SyntheticSpec s;
  s.num_tokens = 128;
  s.seed = 7;
  const auto a = generate_synthetic(s);
  const auto b = generate_synthetic(s);
  CHECK(a.layer.keys == b.layer.keys);
  CHECK(a.layer.window_queries == b.layer.window_queries);
  CHECK(a.needles == b.needles);
  s.seed = 8;
  CHECK(generate_synthetic(s).layer.keys != a.layer.keys);
  CHECK(a.layer.num_tokens() == 128);
  CHECK(a.layer.keys[0].rows() == 128 + s.window);
  CHECK(a.mids[0].size() == 13);
}

TEST_CASE("strong needles top the attention-sum ranking") {
  SyntheticSpec s;
  s.num_tokens = 256;
  s.needle_gain = 12.0;
  s.mid_importance_fraction = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    s.seed = seed;
    for (const auto r : needle_ranks(generate_synthetic(s))) CHECK(r < s.needle_count);
  }
}

TEST_CASE("zero-gain needles are indistinguishable from background") {
  SyntheticSpec s;
  s.num_tokens = 256;
  s.needle_gain = 0.0;
  double mean_rank = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    s.seed = seed;
    for (const auto r : needle_ranks(generate_synthetic(s))) {
      mean_rank += static_cast<double>(r);
      ++count;
    }
  }
  mean_rank /= static_cast<double>(count);
  // Uniform ranks over [0, 256) have mean 127.5 and a standard error near 2.6 here.
  CHECK(std::abs(mean_rank - 127.5) < 15.0);
}

TEST_CASE("layer files round trip") {
  SyntheticSpec s;
  s.num_tokens = 64;
  s.probe_count = 3;
  const auto layer = generate_synthetic(s).layer;
  const auto dir = std::filesystem::temp_directory_path();
  const auto kv = dir / "mixdim_layer_test.mdkv";
  const auto q = dir / "mixdim_layer_test.queries";
  write_layer(kv, q, layer);
  const auto back = read_layer(kv, q);
  CHECK(back.keys == layer.keys);
  CHECK(back.values == layer.values);
  CHECK(back.window_queries == layer.window_queries);
  CHECK(back.probe_queries == layer.probe_queries);
  CHECK(back.window == layer.window);
  CHECK(back.config.num_query_heads == layer.config.num_query_heads);

  auto bytes = read_file(q);
  bytes[bytes.size() / 2] ^= 1;
  LayerCache scratch;
  CHECK_THROWS_AS(deserialize_queries(bytes, scratch), FormatError);
  std::filesystem::remove(kv);
  std::filesystem::remove(q);
}

}
