#include <doctest.h>

#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "mixdim/pipeline.hpp"
#include "mixdim/report.hpp"
#include "mixdim/synthetic.hpp"
#include "oracles.hpp"

using namespace mixdim;

namespace {

const std::vector<double> kDefaultRatios{0.0, 0.125, 0.25, 1.0};

// Tokens kept (nonzero dim) per head, concatenated with head offsets.
std::vector<std::size_t> kept_tokens(const CompressedCache& cache) {
  std::vector<std::size_t> out;
  const auto dims = allocated_dims(cache);
  for (std::size_t j = 0; j < dims.size(); ++j)
    for (std::size_t t = 0; t < dims[j].size(); ++t)
      if (dims[j][t] != 0) out.push_back(j * cache.num_tokens + t);
  return out;
}

void check_window_kept(const CompressedCache& cache, const LayerCache& layer) {
  const std::size_t n = layer.num_tokens();
  if (cache.layout == CacheLayout::joint) {
    for (std::size_t j = 0; j < layer.config.num_kv_heads; ++j)
      CHECK(cache.heads[0].window_keys.columns(j * cache.head_dim, cache.head_dim) ==
            layer.keys[j].rows_range(n, layer.window));
    return;
  }
  for (std::size_t j = 0; j < layer.config.num_kv_heads; ++j) {
    CHECK(cache.heads[j].window_keys == layer.keys[j].rows_range(n, layer.window));
    CHECK(cache.heads[j].window_values == layer.values[j].rows_range(n, layer.window));
  }
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("budget units") {
  const GqaConfig cfg{8, 2, 64};
  CHECK(BudgetSpec{128, false}.layer_entries(cfg) == 2ULL * 8 * 128 * 64);
  CHECK(BudgetSpec{128, true}.layer_entries(cfg) == 8ULL * 128 * 64);
  std::mt19937_64 rng(1);
  const auto layer = testing::random_layer(rng, 64, 8, 16, 4, 2);
  const auto b = headwise_budget(layer, {32, false}, 4);
  CHECK(b.layer_entries == 2 * 4 * 32 * 16);
  CHECK(b.window_entries == 2 * 2 * 8 * 16);
  CHECK(b.projection_entries == 2 * 2 * 16 * 4);
  CHECK(b.token_budget == static_cast<std::int64_t>((b.layer_entries - b.window_entries - b.projection_entries) / 2));
  CHECK_THROWS_AS(headwise_budget(layer, {1, false}, 4), ConfigError);
  CHECK(parse_mode("mixeddim-h") == Mode::mixeddim_h);
  CHECK(to_string(Mode::jointhead) == "jointhead");
  CHECK_THROWS_AS(parse_mode("bogus"), ConfigError);
}

TEST_CASE("generous budget keeps everything in every mode") {
  std::mt19937_64 rng(2);
  const auto layer = testing::random_layer(rng, 40, 6, 16, 4, 2);
  const BudgetSpec big{400, false};
  const double weights[] = {1.0, 1.0};
  for (const auto& result :
       {compress_mixeddim(layer, big, kDefaultRatios), compress_mixeddim(layer, big, kDefaultRatios, Mode::jointhead),
        compress_mixeddim_h(layer, big, kDefaultRatios, weights), compress_snapkv(layer, big)}) {
    CHECK(result.report.attention_error < 1e-5);
    for (const auto& h : result.report.heads) {
      CHECK(h.histogram.back() == 1.0);
      double sum = 0.0;
      for (double x : h.histogram) sum += x;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    check_window_kept(result.cache, layer);
    CHECK(result.report.footprint.total <= big.layer_entries(layer.config));
  }
}

TEST_CASE("eviction ratios reduce to value-weighted top-k") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto layer = testing::random_layer(rng, 50, 5, 8, 4, 2);
    const BudgetSpec budget{12 + static_cast<std::size_t>(trial), false};
    const auto result = compress_mixeddim(layer, budget, {0.0, 1.0});
    std::vector<double> scores;
    for (std::size_t j = 0; j < 2; ++j) {
      const auto s = snapkv_scores(layer.keys[j], layer.values[j], layer.group_queries(j), 50).value_weighted;
      scores.insert(scores.end(), s.begin(), s.end());
    }
    const auto k = static_cast<std::size_t>(result.report.budget.token_budget) / 8;
    CHECK(kept_tokens(result.cache) == oracle::top_k(scores, k));
  }
}

TEST_CASE("heads with more impact receive more dims") {
  SyntheticSpec spec;
  spec.num_tokens = 256;
  spec.window = 16;
  spec.head_dim = 32;
  spec.num_query_heads = 4;
  spec.num_kv_heads = 2;
  spec.needle_gain = 8.0;
  auto syn = generate_synthetic(spec);
  auto& layer = syn.layer;
  // Head 1: erase the needles and flatten its queries so attention is near uniform.
  std::mt19937_64 rng(4);
  const auto flat = testing::random_matrix(layer.keys[1].rows(), 32, rng, 0.05);
  layer.keys[1] = flat;
  for (std::size_t h = 2; h < 4; ++h) layer.window_queries[h] = testing::random_matrix(16, 32, rng, 0.05);
  // Tight enough that only the most important tokens can be kept.
  const auto result = compress_mixeddim(layer, {15, false}, kDefaultRatios);
  CHECK(result.report.heads[0].total_dims > result.report.heads[1].total_dims);
}

TEST_CASE("per-head quotas never beat the joint allocation") {
  std::mt19937_64 rng(5);
  const double weights[] = {1.0, 1.0, 1.0};
  for (int trial = 0; trial < 30; ++trial) {
    const auto layer = testing::random_layer(rng, 48, 4, 16, 6, 3);
    const BudgetSpec budget{16, false};
    const auto joint = compress_mixeddim(layer, budget, kDefaultRatios);
    const auto per_head = compress_mixeddim_h(layer, budget, kDefaultRatios, weights);
    CHECK(joint.report.realized_loss <= per_head.report.realized_loss + 1e-9);
    for (const auto& h : per_head.report.heads) CHECK(h.token_budget >= 0);
  }
}

TEST_CASE("single head: per-head and joint allocation agree") {
  std::mt19937_64 rng(6);
  const auto layer = testing::random_layer(rng, 60, 6, 16, 2, 1);
  const double w[] = {3.0};
  const auto a = compress_mixeddim(layer, {20, false}, kDefaultRatios);
  const auto b = compress_mixeddim_h(layer, {20, false}, kDefaultRatios, w);
  CHECK(a.cache == b.cache);
  CHECK(a.report.realized_loss == b.report.realized_loss);
}

TEST_CASE("head budgets proportional to eviction loss") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto layer = testing::random_layer(rng, 40, 4, 16, 4, 2);
    std::vector<double> weights;
    for (std::size_t j = 0; j < 2; ++j) {
      const auto s = snapkv_scores(layer.keys[j], layer.values[j], layer.group_queries(j), 40).value_weighted;
      double sum = 0.0;
      for (double x : s) sum += 2.0 * x;
      weights.push_back(sum);
    }
    try {
      const auto r = compress_mixeddim_h(layer, {24, false}, kDefaultRatios, weights);
      for (std::size_t j = 0; j < 2; ++j) {
        CHECK(r.report.heads[j].total_dims <= static_cast<std::uint64_t>(r.report.heads[j].token_budget));
        CHECK(r.report.heads[j].histogram.size() == 4);
        CHECK(r.report.footprint.per_head[j].token_entries + r.report.footprint.per_head[j].projection_entries <=
              static_cast<std::uint64_t>(std::floor(BudgetSpec{24, false}.layer_entries(layer.config) * weights[j] /
                                                    (weights[0] + weights[1]))));
      }
    } catch (const ConfigError&) {
      // A head whose share cannot cover its window is rejected, which is allowed.
    }
  }
}

TEST_CASE("infeasible per-head quota names the head") {
  std::mt19937_64 rng(8);
  const auto layer = testing::random_layer(rng, 40, 8, 16, 4, 2);
  const double w[] = {1.0, 0.01};
  try {
    compress_mixeddim_h(layer, {12, false}, kDefaultRatios, w);
    FAIL("expected a configuration error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("head 1") != std::string::npos);
  }
  CHECK_THROWS_AS(compress_mixeddim(layer, {1, false}, kDefaultRatios), ConfigError);
  CHECK_THROWS_AS(compress_snapkv(layer, {1, false}), ConfigError);
}

TEST_CASE("snapkv keeps the attention-sum top-k") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto layer = testing::random_layer(rng, 50, 5, 8, 4, 2);
    const BudgetSpec budget{10 + static_cast<std::size_t>(trial), false};
    const auto r = compress_snapkv(layer, budget);
    const auto dims = allocated_dims(r.cache);
    const std::size_t k = static_cast<std::size_t>(r.report.heads[0].token_budget) / 8;
    for (std::size_t j = 0; j < 2; ++j) {
      const auto s = snapkv_scores(layer.keys[j], layer.values[j], layer.group_queries(j), 50).attention_sum;
      std::vector<std::size_t> kept;
      for (std::size_t t = 0; t < 50; ++t)
        if (dims[j][t] != 0) kept.push_back(t);
      CHECK(kept == oracle::top_k(s, k));
    }
    CHECK(r.report.footprint.total <= budget.layer_entries(layer.config));
    check_window_kept(r.cache, layer);
  }
}

TEST_CASE("snapkv retains a dominant token") {
  std::mt19937_64 rng(10);
  auto layer = testing::random_layer(rng, 30, 4, 8, 2, 1);
  for (std::size_t i = 0; i < 8; ++i) layer.keys[0](17, i) = 0.f;
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t i = 0; i < 8; ++i) layer.window_queries[h](r, i) = i == 0 ? 1.f : 0.f;
  layer.keys[0](17, 0) = 60.f;
  for (std::size_t t = 3; t < 8; ++t) {
    const auto r = compress_snapkv(layer, {t, false});
    CHECK(allocated_dims(r.cache)[0][17] == 8);
  }
}

TEST_CASE("window-only cache error matches a direct reference") {
  std::mt19937_64 rng(11);
  const auto layer = testing::random_layer(rng, 30, 4, 8, 2, 1);
  const auto r = compress_mixeddim(layer, {1000, false}, {0.0, 1.0});
  auto cache = r.cache;
  cache.heads[0].groups.clear();
  const auto probes = default_probes(layer);
  double want = 0.0;
  std::size_t count = 0;
  const auto full_k = oracle::to_rows(layer.keys[0]);
  const auto full_v = oracle::to_rows(layer.values[0]);
  const auto win_k = oracle::to_rows(layer.keys[0].rows_range(30, 4));
  const auto win_v = oracle::to_rows(layer.values[0].rows_range(30, 4));
  for (const auto& p : probes)
    for (std::size_t m = 0; m < p.rows(); ++m) {
      const auto a = oracle::attend(p.row(m), full_k, full_v);
      const auto b = oracle::attend(p.row(m), win_k, win_v);
      long double acc = 0;
      for (std::size_t i = 0; i < 8; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
      want += static_cast<double>(std::sqrt(acc));
      ++count;
    }
  CHECK(evaluate_error(cache, layer, probes) == doctest::Approx(want / count).epsilon(1e-5));
}

TEST_CASE("footprints respect the budget in every mode") {
  std::mt19937_64 rng(12);
  const double weights[] = {1.0, 2.0};
  for (int trial = 0; trial < 10; ++trial) {
    const auto layer = testing::random_layer(rng, 64, 4, 16, 4, 2);
    const BudgetSpec budget{20 + static_cast<std::size_t>(trial) * 3, trial % 2 == 1};
    const auto cap = budget.layer_entries(layer.config);
    const auto ok = [&](const CompressionResult& r) {
      CHECK(r.report.footprint.total <= cap);
      check_window_kept(r.cache, layer);
    };
    try {
      ok(compress_mixeddim(layer, budget, kDefaultRatios));
      ok(compress_mixeddim(layer, budget, kDefaultRatios, Mode::jointhead));
      ok(compress_mixeddim_h(layer, budget, kDefaultRatios, weights));
      ok(compress_snapkv(layer, budget));
    } catch (const ConfigError&) {
      // Tight halved budgets may not cover the joint projection; rejection is the contract.
    }
  }
}

TEST_CASE("results are deterministic") {
  std::mt19937_64 rng(13);
  const auto layer = testing::random_layer(rng, 40, 4, 16, 4, 2);
  const auto a = compress_mixeddim(layer, {20, false}, kDefaultRatios);
  const auto b = compress_mixeddim(layer, {20, false}, kDefaultRatios);
  CHECK(a.cache == b.cache);
  CHECK(to_json(a.report).dump() == to_json(b.report).dump());
}

TEST_CASE("head budget table parsing") {
  std::istringstream in("# layer head weight\n0 0 1.5\n0,1,0.5\n\n1 0 2 # trailing comment\n");
  const auto hb = HeadBudgets::parse(in);
  CHECK(hb.for_layer(0, 2) == std::vector<double>{1.5, 0.5});
  CHECK(hb.for_layer(1, 1) == std::vector<double>{2.0});
  CHECK_THROWS_AS(hb.for_layer(1, 2), ConfigError);
  std::istringstream bad("0 0 -1\n");
  CHECK_THROWS_AS(HeadBudgets::parse(bad), ConfigError);
  std::istringstream junk("0 zero 1\n");
  CHECK_THROWS_AS(HeadBudgets::parse(junk), ConfigError);
  CHECK(HeadBudgets::uniform(0, 3).for_layer(0, 3) == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("report serialization") {
  std::mt19937_64 rng(14);
  const auto layer = testing::random_layer(rng, 40, 4, 16, 4, 2);
  const auto r = compress_mixeddim(layer, {20, false}, kDefaultRatios);
  const auto j = to_json(r.report);
  CHECK(j.at("mode") == "mixeddim");
  CHECK(j.at("heads").size() == 2);
  CHECK(j.at("gap").contains("relative_gap"));
  std::ostringstream csv;
  write_report_csv(csv, r.report);
  CHECK(csv.str().rfind("head,ratio,dim,fraction,total_dims,realized_loss\n", 0) == 0);
}

}
