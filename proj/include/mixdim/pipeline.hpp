#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mixdim/allocation.hpp"
#include "mixdim/attention.hpp"
#include "mixdim/cache.hpp"

namespace mixdim {

// One attention layer's prompt state. Rows [0, N) of keys/values are
// compressible; the trailing `window` rows form the local window whose queries
// drive scoring.
struct LayerCache {
  GqaConfig config;
  std::size_t window = 0;
  std::vector<Matrix> keys;            // per KV head, (N + window) x D
  std::vector<Matrix> values;          // per KV head
  std::vector<Matrix> window_queries;  // per query head, window x D
  std::vector<Matrix> probe_queries;   // per query head, optional held-out probes

  std::size_t num_tokens() const noexcept { return keys.empty() ? 0 : keys.front().rows() - window; }

  // Throws ContractError if shapes disagree with the config.
  void validate() const;

  // Window queries of every query head reading KV head `kv_head`, stacked.
  Matrix group_queries(std::size_t kv_head) const;
};

enum class Mode { mixeddim, mixeddim_h, snapkv, jointhead };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

// Equivalent-KV-size budget: a layer may hold H * T * D key entries with values
// mirroring them, i.e. 2 * H * T * D scalar entries. `key_entries_only` halves
// that to H * T * D scalar entries in total.
struct BudgetSpec {
  std::size_t kv_size = 0;
  bool key_entries_only = false;

  std::uint64_t layer_entries(const GqaConfig& config) const;
};

// Budget arithmetic shared by every mode, in scalar entries unless noted.
struct BudgetBreakdown {
  std::uint64_t layer_entries = 0;
  std::uint64_t window_entries = 0;
  std::uint64_t projection_entries = 0;
  std::int64_t token_budget = 0;  // dim units; one unit is one K and one V scalar
};

// Per-(layer, head) weights splitting a layer budget across KV heads.
class HeadBudgets {
 public:
  HeadBudgets() = default;

  void set(std::size_t layer, std::size_t head, double weight);
  // Weights for heads [0, num_heads) of `layer`; throws ConfigError if any is missing.
  std::vector<double> for_layer(std::size_t layer, std::size_t num_heads) const;

  // Plain-text table: `layer_index head_index weight` per line (whitespace or
  // comma separated, '#' starts a comment).
  static HeadBudgets parse(std::istream& in);
  static HeadBudgets load(const std::filesystem::path& path);

  static HeadBudgets uniform(std::size_t layer, std::size_t num_heads);

 private:
  std::map<std::pair<std::size_t, std::size_t>, double> weights_;
};

struct HeadReport {
  std::vector<double> histogram;  // fraction of compressible tokens at each candidate dim
  std::uint64_t total_dims = 0;   // sum of allocated dims over compressible tokens
  std::int64_t token_budget = -1; // per-head quota (MixedDimKV-H and SnapKV only)
  double realized_loss = 0.0;
};

struct CompressionReport {
  Mode mode = Mode::mixeddim;
  std::size_t kv_size = 0;
  std::vector<double> ratios;
  std::vector<std::uint32_t> candidate_dims;
  BudgetBreakdown budget;
  std::vector<HeadReport> heads;
  double realized_loss = 0.0;
  DualGapReport gap;
  double nonconvexity = 0.0;
  MemoryFootprint footprint;
  double attention_error = 0.0;
};

struct CompressionResult {
  CompressedCache cache;
  CompressionReport report;
  std::vector<LossTable> tables;  // one per allocation problem input (per stored head)
};

// MixedDimKV: one allocation problem over every head's tokens of the layer.
// `mode` selects head-wise bases (Mode::mixeddim) or one joint basis
// (Mode::jointhead).
CompressionResult compress_mixeddim(const LayerCache& layer, const BudgetSpec& budget,
                                    const std::vector<double>& ratios, Mode mode = Mode::mixeddim);

// MixedDimKV-H: each KV head receives the layer budget share given by its
// weight and solves its own allocation problem.
CompressionResult compress_mixeddim_h(const LayerCache& layer, const BudgetSpec& budget,
                                      const std::vector<double>& ratios, std::span<const double> head_weights);

// SnapKV-style eviction: per KV head keep the top-k compressible tokens by
// attention-sum score at full dim, k = per-head token budget - window.
CompressionResult compress_snapkv(const LayerCache& layer, const BudgetSpec& budget);

// Mean over query heads and probe rows of ||full attention - cache attention||_2.
// `probes[h]` holds the probe queries of query head h.
double evaluate_error(const CompressedCache& cache, const LayerCache& reference, std::span<const Matrix> probes);

// Window queries plus any held-out probes, per query head.
std::vector<Matrix> default_probes(const LayerCache& layer);

// Budget arithmetic per mode; throws ConfigError if the window and projection
// overhead do not fit.
BudgetBreakdown headwise_budget(const LayerCache& layer, const BudgetSpec& budget, std::size_t max_rank);
BudgetBreakdown joint_budget(const LayerCache& layer, const BudgetSpec& budget, std::size_t joint_max_rank);

}  // namespace mixdim
