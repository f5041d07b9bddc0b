#include "mixdim/harness.hpp"

#include <cmath>

namespace mixdim {

std::size_t kv_size_for_fraction(const GqaConfig& config, std::size_t total_tokens, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("budget fraction must lie in (0, 1]");
  const double full = static_cast<double>(config.num_kv_heads * total_tokens);
  return static_cast<std::size_t>(std::llround(fraction * full / static_cast<double>(config.num_query_heads)));
}

GapPoint gap_point(const SyntheticSpec& spec, double budget_fraction, const std::vector<double>& ratios) {
  const auto layer = generate_synthetic(spec).layer;
  const BudgetSpec budget{kv_size_for_fraction(layer.config, spec.num_tokens + spec.window, budget_fraction)};
  const auto result = compress_mixeddim(layer, budget, ratios);
  return {spec.num_tokens, result.report.gap};
}

BenchPoint bench_point(const SyntheticSpec& spec, double budget_fraction, const std::vector<double>& ratios) {
  const auto layer = generate_synthetic(spec).layer;
  BenchPoint p;
  p.seed = spec.seed;
  p.kv_size = kv_size_for_fraction(layer.config, spec.num_tokens + spec.window, budget_fraction);
  const BudgetSpec budget{p.kv_size};
  const auto mixed = compress_mixeddim(layer, budget, ratios);
  const auto snap = compress_snapkv(layer, budget);
  const std::vector<double> uniform(layer.config.num_kv_heads, 1.0);
  const auto per_head = compress_mixeddim_h(layer, budget, ratios, uniform);
  p.mixeddim_error = mixed.report.attention_error;
  p.snapkv_error = snap.report.attention_error;
  p.mixeddim_loss = mixed.report.realized_loss;
  p.mixeddim_h_loss = per_head.report.realized_loss;
  return p;
}

}  // namespace mixdim
