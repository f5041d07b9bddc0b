#pragma once

#include <cstddef>
#include <cstdint>

#include "mixdim/pipeline.hpp"
#include "mixdim/synthetic.hpp"

namespace mixdim {

// Equivalent KV size T whose layer budget is `fraction` of the uncompressed
// cache (2 * H_kv * (N + alpha) * D entries), rounded to nearest.
std::size_t kv_size_for_fraction(const GqaConfig& config, std::size_t total_tokens, double fraction);

struct GapPoint {
  std::size_t num_tokens = 0;
  DualGapReport gap;
};

// Duality gap of one MixedDimKV allocation on a synthetic layer.
GapPoint gap_point(const SyntheticSpec& spec, double budget_fraction, const std::vector<double>& ratios);

struct BenchPoint {
  std::uint64_t seed = 0;
  std::size_t kv_size = 0;
  double mixeddim_error = 0.0;
  double snapkv_error = 0.0;
  double mixeddim_loss = 0.0;
  double mixeddim_h_loss = 0.0;
};

// MixedDimKV, MixedDimKV-H (uniform quotas) and SnapKV at one shared budget.
BenchPoint bench_point(const SyntheticSpec& spec, double budget_fraction, const std::vector<double>& ratios);

}  // namespace mixdim
