#include "mixdim/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mixdim {

void LayerCache::validate() const {
  config.validate();
  const std::size_t d = config.head_dim;
  if (keys.size() != config.num_kv_heads || values.size() != config.num_kv_heads)
    throw ContractError("layer: expected one key and value matrix per KV head");
  if (window_queries.size() != config.num_query_heads)
    throw ContractError("layer: expected one window-query matrix per query head");
  if (!probe_queries.empty() && probe_queries.size() != config.num_query_heads)
    throw ContractError("layer: probe queries must cover every query head");
  if (window == 0) throw ContractError("layer: window must hold at least one token");
  const std::size_t total = keys.front().rows();
  if (total <= window) throw ContractError("layer: window must be shorter than the sequence");
  for (std::size_t j = 0; j < keys.size(); ++j)
    if (keys[j].rows() != total || values[j].rows() != total || keys[j].cols() != d || values[j].cols() != d)
      throw ContractError("layer: KV head " + std::to_string(j) + " has the wrong shape");
  for (const auto& q : window_queries)
    if (q.cols() != d || q.rows() == 0) throw ContractError("layer: window queries have the wrong shape");
  for (const auto& q : probe_queries)
    if (q.cols() != d) throw ContractError("layer: probe queries have the wrong shape");
}

Matrix LayerCache::group_queries(std::size_t kv_head) const {
  const std::size_t g = config.group_size();
  return vstack<float>(std::span(window_queries).subspan(kv_head * g, g));
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::mixeddim: return "mixeddim";
    case Mode::mixeddim_h: return "mixeddim-h";
    case Mode::snapkv: return "snapkv";
    case Mode::jointhead: return "jointhead";
  }
  return "unknown";
}

Mode parse_mode(const std::string& text) {
  for (const Mode m : {Mode::mixeddim, Mode::mixeddim_h, Mode::snapkv, Mode::jointhead})
    if (to_string(m) == text) return m;
  throw ConfigError("unknown mode '" + text + "'");
}

std::uint64_t BudgetSpec::layer_entries(const GqaConfig& config) const {
  const std::uint64_t key_entries = static_cast<std::uint64_t>(config.num_query_heads) * kv_size * config.head_dim;
  return key_entries_only ? key_entries : 2 * key_entries;
}

// ---------------------------------------------------------------------------

void HeadBudgets::set(std::size_t layer, std::size_t head, double weight) {
  if (!(weight >= 0.0) || !std::isfinite(weight))
    throw ConfigError("head budget weight for layer " + std::to_string(layer) + " head " + std::to_string(head) +
                      " must be finite and non-negative");
  weights_[{layer, head}] = weight;
}

std::vector<double> HeadBudgets::for_layer(std::size_t layer, std::size_t num_heads) const {
  std::vector<double> out(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const auto it = weights_.find({layer, h});
    if (it == weights_.end())
      throw ConfigError("head budgets: no weight for layer " + std::to_string(layer) + " head " + std::to_string(h));
    out[h] = it->second;
  }
  return out;
}

HeadBudgets HeadBudgets::parse(std::istream& in) {
  HeadBudgets b;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::string first;
    if (!(fields >> first)) continue;
    std::istringstream rest(line);
    long long layer = -1, head = -1;
    double weight = 0.0;
    std::string extra;
    if (!(rest >> layer >> head >> weight) || (rest >> extra) || layer < 0 || head < 0)
      throw ConfigError("head budgets: malformed line " + std::to_string(lineno));
    b.set(static_cast<std::size_t>(layer), static_cast<std::size_t>(head), weight);
  }
  return b;
}

HeadBudgets HeadBudgets::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open head budgets file " + path.string());
  return parse(in);
}

HeadBudgets HeadBudgets::uniform(std::size_t layer, std::size_t num_heads) {
  HeadBudgets b;
  for (std::size_t h = 0; h < num_heads; ++h) b.set(layer, h, 1.0);
  return b;
}

// ---------------------------------------------------------------------------

namespace {

BudgetBreakdown breakdown(std::uint64_t layer_entries, std::uint64_t window_entries, std::uint64_t projection_entries,
                          const std::string& who) {
  if (layer_entries < window_entries + projection_entries)
    throw ConfigError(who + " budget of " + std::to_string(layer_entries) + " entries cannot hold the window (" +
                      std::to_string(window_entries) + ") and projection matrices (" +
                      std::to_string(projection_entries) + ")");
  BudgetBreakdown b;
  b.layer_entries = layer_entries;
  b.window_entries = window_entries;
  b.projection_entries = projection_entries;
  b.token_budget = static_cast<std::int64_t>((layer_entries - window_entries - projection_entries) / 2);
  return b;
}

ProjectionBasis fit_or_empty(const Matrix& x, std::size_t max_rank) {
  return max_rank == 0 ? ProjectionBasis::empty(x.cols()) : fit_basis(x, max_rank);
}

std::vector<double> histogram(std::span<const std::uint32_t> dims, std::span<const std::uint32_t> candidates) {
  std::vector<double> h(candidates.size(), 0.0);
  if (dims.empty()) return h;
  for (const std::uint32_t d : dims)
    h[static_cast<std::size_t>(std::ranges::lower_bound(candidates, d) - candidates.begin())] += 1.0;
  for (double& x : h) x /= static_cast<double>(dims.size());
  return h;
}

HeadReport head_report(const LossTable* table, std::span<const std::uint32_t> dims,
                       std::span<const std::uint32_t> candidates) {
  HeadReport r;
  r.histogram = histogram(dims, candidates);
  for (std::size_t t = 0; t < dims.size(); ++t) {
    r.total_dims += dims[t];
    if (table != nullptr) r.realized_loss += table->loss_at(t, dims[t]);
  }
  return r;
}

CompressedCache empty_cache(const LayerCache& layer, CacheLayout layout, std::size_t max_rank,
                            std::vector<std::uint32_t> ratio_dims) {
  CompressedCache c;
  c.layout = layout;
  c.num_kv_heads = layer.config.num_kv_heads;
  c.head_dim = layer.config.head_dim;
  c.window = layer.window;
  c.num_tokens = layer.num_tokens();
  c.max_rank = max_rank;
  c.ratio_dims = std::move(ratio_dims);
  return c;
}

void finish_report(CompressionResult& result, const LayerCache& layer) {
  result.report.footprint = memory_footprint(result.cache);
  const auto probes = default_probes(layer);
  result.report.attention_error = evaluate_error(result.cache, layer, probes);
}

CompressionResult compress_headwise(const LayerCache& layer, const BudgetSpec& budget,
                                    const std::vector<double>& ratios) {
  const std::size_t n = layer.num_tokens();
  const std::size_t w = layer.window;
  const RatioSet rs(ratios, layer.config.head_dim);
  const std::size_t r_max = rs.max_stored_rank();
  const BudgetBreakdown bb = headwise_budget(layer, budget, r_max);

  CompressionResult result;
  std::vector<ProjectionBasis> bases_k, bases_v;
  for (std::size_t j = 0; j < layer.config.num_kv_heads; ++j) {
    bases_k.push_back(fit_or_empty(layer.keys[j].rows_range(0, n), r_max));
    bases_v.push_back(fit_or_empty(layer.values[j].rows_range(0, n), r_max));
    result.tables.push_back(build_loss_table(layer.keys[j], layer.values[j], layer.group_queries(j), n, rs,
                                             bases_k[j], bases_v[j]));
  }
  const LossTable joint = LossTable::concat(result.tables);
  const Allocation alloc = bisect_allocate(joint, bb.token_budget);

  result.cache = empty_cache(layer, CacheLayout::headwise, r_max, rs.dims());
  auto& report = result.report;
  for (std::size_t j = 0; j < layer.config.num_kv_heads; ++j) {
    const std::span<const std::uint32_t> dims(alloc.dims.data() + j * n, n);
    result.cache.heads.push_back(build_head_cache(layer.keys[j].rows_range(0, n), layer.values[j].rows_range(0, n),
                                                  dims, rs.dims(), bases_k[j], bases_v[j],
                                                  layer.keys[j].rows_range(n, w), layer.values[j].rows_range(n, w)));
    report.heads.push_back(head_report(&result.tables[j], dims, rs.dims()));
  }
  report.mode = Mode::mixeddim;
  report.ratios = rs.dim_ratios();
  report.candidate_dims = rs.dims();
  report.budget = bb;
  report.realized_loss = alloc.realized_loss;
  report.gap = gap_report(joint, bb.token_budget, alloc);
  report.nonconvexity = nonconvexity(joint);
  return result;
}

CompressionResult compress_joint(const LayerCache& layer, const BudgetSpec& budget,
                                 const std::vector<double>& ratios) {
  const std::size_t n = layer.num_tokens();
  const std::size_t w = layer.window;
  const std::size_t hkv = layer.config.num_kv_heads;
  const RatioSet rs(ratios, hkv * layer.config.head_dim);
  const std::size_t r_max = rs.max_stored_rank();
  const BudgetBreakdown bb = joint_budget(layer, budget, r_max);

  std::vector<Matrix> comp_k, comp_v, win_k, win_v, queries;
  for (std::size_t j = 0; j < hkv; ++j) {
    comp_k.push_back(layer.keys[j].rows_range(0, n));
    comp_v.push_back(layer.values[j].rows_range(0, n));
    win_k.push_back(layer.keys[j].rows_range(n, w));
    win_v.push_back(layer.values[j].rows_range(n, w));
    queries.push_back(layer.group_queries(j));
  }
  const ProjectionBasis bk = r_max == 0 ? ProjectionBasis::empty(rs.head_dim()) : fit_joint_basis(comp_k, r_max);
  const ProjectionBasis bv = r_max == 0 ? ProjectionBasis::empty(rs.head_dim()) : fit_joint_basis(comp_v, r_max);

  CompressionResult result;
  result.tables.push_back(build_joint_loss_table(layer.keys, layer.values, queries, n, rs, bk, bv));
  const LossTable& table = result.tables.front();
  const Allocation alloc = bisect_allocate(table, bb.token_budget);

  result.cache = empty_cache(layer, CacheLayout::joint, r_max, rs.dims());
  result.cache.heads.push_back(build_head_cache(hstack<float>(comp_k), hstack<float>(comp_v), alloc.dims, rs.dims(),
                                                bk, bv, hstack<float>(win_k), hstack<float>(win_v)));
  auto& report = result.report;
  report.mode = Mode::jointhead;
  report.ratios = rs.dim_ratios();
  report.candidate_dims = rs.dims();
  report.budget = bb;
  report.heads.push_back(head_report(&table, alloc.dims, rs.dims()));
  report.realized_loss = alloc.realized_loss;
  report.gap = gap_report(table, bb.token_budget, alloc);
  report.nonconvexity = nonconvexity(table);
  return result;
}

}  // namespace

BudgetBreakdown headwise_budget(const LayerCache& layer, const BudgetSpec& budget, std::size_t max_rank) {
  const auto& c = layer.config;
  return breakdown(budget.layer_entries(c), 2ULL * c.num_kv_heads * layer.window * c.head_dim,
                   headwise_projection_entries(c.num_kv_heads, c.head_dim, max_rank), "layer");
}

BudgetBreakdown joint_budget(const LayerCache& layer, const BudgetSpec& budget, std::size_t joint_max_rank) {
  const auto& c = layer.config;
  return breakdown(budget.layer_entries(c), 2ULL * c.num_kv_heads * layer.window * c.head_dim,
                   joint_projection_entries(c.num_kv_heads, c.head_dim, joint_max_rank), "layer");
}

CompressionResult compress_mixeddim(const LayerCache& layer, const BudgetSpec& budget,
                                    const std::vector<double>& ratios, Mode mode) {
  layer.validate();
  CompressionResult result;
  switch (mode) {
    case Mode::mixeddim: result = compress_headwise(layer, budget, ratios); break;
    case Mode::jointhead: result = compress_joint(layer, budget, ratios); break;
    default: throw ContractError("compress_mixeddim: mode must be mixeddim or jointhead");
  }
  result.report.kv_size = budget.kv_size;
  finish_report(result, layer);
  return result;
}

CompressionResult compress_mixeddim_h(const LayerCache& layer, const BudgetSpec& budget,
                                      const std::vector<double>& ratios, std::span<const double> head_weights) {
  layer.validate();
  const auto& c = layer.config;
  const std::size_t n = layer.num_tokens();
  const std::size_t w = layer.window;
  if (head_weights.size() != c.num_kv_heads) throw ConfigError("head budgets: expected one weight per KV head");
  double weight_sum = 0.0;
  for (const double x : head_weights) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError("head budgets: weights must be finite and non-negative");
    weight_sum += x;
  }
  if (!(weight_sum > 0.0)) throw ConfigError("head budgets: weights sum to zero");

  const RatioSet rs(ratios, c.head_dim);
  const std::size_t r_max = rs.max_stored_rank();
  const std::uint64_t layer_entries = budget.layer_entries(c);
  std::vector<BudgetBreakdown> quotas;
  for (std::size_t j = 0; j < c.num_kv_heads; ++j) {
    const auto share = static_cast<std::uint64_t>(
        std::floor(static_cast<long double>(layer_entries) * head_weights[j] / weight_sum));
    quotas.push_back(breakdown(share, 2ULL * w * c.head_dim, headwise_projection_entries(1, c.head_dim, r_max),
                               "head " + std::to_string(j)));
  }

  CompressionResult result;
  result.cache = empty_cache(layer, CacheLayout::headwise, r_max, rs.dims());
  auto& report = result.report;
  report.mode = Mode::mixeddim_h;
  report.kv_size = budget.kv_size;
  report.ratios = rs.dim_ratios();
  report.candidate_dims = rs.dims();
  report.budget.layer_entries = layer_entries;
  for (std::size_t j = 0; j < c.num_kv_heads; ++j) {
    const ProjectionBasis bk = fit_or_empty(layer.keys[j].rows_range(0, n), r_max);
    const ProjectionBasis bv = fit_or_empty(layer.values[j].rows_range(0, n), r_max);
    result.tables.push_back(
        build_loss_table(layer.keys[j], layer.values[j], layer.group_queries(j), n, rs, bk, bv));
    const LossTable& table = result.tables.back();
    const Allocation alloc = bisect_allocate(table, quotas[j].token_budget);
    const DualGapReport gap = gap_report(table, quotas[j].token_budget, alloc);
    result.cache.heads.push_back(build_head_cache(layer.keys[j].rows_range(0, n), layer.values[j].rows_range(0, n),
                                                  alloc.dims, rs.dims(), bk, bv, layer.keys[j].rows_range(n, w),
                                                  layer.values[j].rows_range(n, w)));
    HeadReport hr = head_report(&table, alloc.dims, rs.dims());
    hr.token_budget = quotas[j].token_budget;
    report.heads.push_back(std::move(hr));
    report.budget.window_entries += quotas[j].window_entries;
    report.budget.projection_entries += quotas[j].projection_entries;
    report.budget.token_budget += quotas[j].token_budget;
    report.realized_loss += alloc.realized_loss;
    report.gap.primal_value += gap.primal_value;
    report.gap.dual_value += gap.dual_value;
    report.nonconvexity = std::max(report.nonconvexity, nonconvexity(table));
  }
  report.gap.gap_bound = report.gap.primal_value - report.gap.dual_value;
  report.gap.relative_gap = report.gap.gap_bound / std::max(report.gap.primal_value, 1e-12);
  finish_report(result, layer);
  return result;
}

CompressionResult compress_snapkv(const LayerCache& layer, const BudgetSpec& budget) {
  layer.validate();
  const auto& c = layer.config;
  const std::size_t n = layer.num_tokens();
  const std::size_t w = layer.window;
  const std::uint64_t per_head = budget.layer_entries(c) / c.num_kv_heads;
  const BudgetBreakdown head_budget = breakdown(per_head, 2ULL * w * c.head_dim, 0, "per-head");
  // Whole tokens only: each retained token costs head_dim dim units.
  const std::size_t keep = std::min<std::size_t>(n, static_cast<std::size_t>(head_budget.token_budget) / c.head_dim);

  const std::vector<std::uint32_t> candidates{0, static_cast<std::uint32_t>(c.head_dim)};
  CompressionResult result;
  result.cache = empty_cache(layer, CacheLayout::headwise, 0, candidates);
  auto& report = result.report;
  report.mode = Mode::snapkv;
  report.kv_size = budget.kv_size;
  report.ratios = {0.0, 1.0};
  report.candidate_dims = candidates;
  report.budget.layer_entries = budget.layer_entries(c);
  for (std::size_t j = 0; j < c.num_kv_heads; ++j) {
    const auto scores = snapkv_scores(layer.keys[j], layer.values[j], layer.group_queries(j), n).attention_sum;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::uint32_t> dims(n, 0);
    for (std::size_t i = 0; i < keep; ++i) dims[order[i]] = static_cast<std::uint32_t>(c.head_dim);
    const ProjectionBasis none = ProjectionBasis::empty(c.head_dim);
    result.cache.heads.push_back(build_head_cache(layer.keys[j].rows_range(0, n), layer.values[j].rows_range(0, n),
                                                  dims, candidates, none, none, layer.keys[j].rows_range(n, w),
                                                  layer.values[j].rows_range(n, w)));
    HeadReport hr = head_report(nullptr, dims, candidates);
    hr.token_budget = head_budget.token_budget;
    report.heads.push_back(std::move(hr));
    report.budget.window_entries += head_budget.window_entries;
    report.budget.token_budget += head_budget.token_budget;
  }
  finish_report(result, layer);
  return result;
}

std::vector<Matrix> default_probes(const LayerCache& layer) {
  std::vector<Matrix> probes;
  for (std::size_t h = 0; h < layer.config.num_query_heads; ++h) {
    if (layer.probe_queries.empty() || layer.probe_queries[h].rows() == 0) {
      probes.push_back(layer.window_queries[h]);
    } else {
      const Matrix parts[] = {layer.window_queries[h], layer.probe_queries[h]};
      probes.push_back(vstack<float>(parts));
    }
  }
  return probes;
}

double evaluate_error(const CompressedCache& cache, const LayerCache& reference, std::span<const Matrix> probes) {
  const auto& c = reference.config;
  if (probes.size() != c.num_query_heads) throw ContractError("evaluate_error: need probes for every query head");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t h = 0; h < c.num_query_heads; ++h) {
    if (probes[h].rows() == 0) continue;
    if (probes[h].cols() != c.head_dim) throw ContractError("evaluate_error: probe width differs from head_dim");
    const std::size_t kv = c.kv_head_for(h);
    const Matrix full = full_attention(probes[h], reference.keys[kv], reference.values[kv]).output;
    const Matrix approx = mixed_rank_attention(probes[h], cache, kv);
    for (std::size_t i = 0; i < probes[h].rows(); ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < c.head_dim; ++k) {
        const double diff = static_cast<double>(full(i, k)) - approx(i, k);
        acc += diff * diff;
      }
      total += std::sqrt(acc);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace mixdim
