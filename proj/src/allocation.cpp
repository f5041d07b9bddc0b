#include "mixdim/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>

namespace mixdim {

namespace {

constexpr int kMaxBisectionSteps = 200;
constexpr double kBracketTolerance = 1e-9;
constexpr double kMaxEnumeration = 1e7;
constexpr double kRelativeGapFloor = 1e-12;

std::size_t argmin_index(std::span<const HullPoint> hull, double lambda) {
  std::size_t best = 0;
  double best_value = hull[0].loss + lambda * hull[0].dim;
  for (std::size_t k = 1; k < hull.size(); ++k) {
    const double v = hull[k].loss + lambda * hull[k].dim;
    if (v < best_value) {
      best_value = v;
      best = k;
    }
  }
  return best;
}

Allocation finish(const LossTable& table, std::vector<std::uint32_t> dims, std::int64_t budget) {
  Allocation a;
  a.dims = std::move(dims);
  for (const std::uint32_t d : a.dims) a.total_dim_cost += d;
  a.realized_loss = primal_value(table, a.dims);
  a.feasible = a.total_dim_cost <= static_cast<std::uint64_t>(budget);
  return a;
}

}  // namespace

InnerSolution inner_argmin(const LossTable& table, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("inner_argmin: lambda must be non-negative");
  InnerSolution s;
  s.dims.resize(table.num_tokens());
  for (std::size_t t = 0; t < table.num_tokens(); ++t) {
    const auto hull = table.hull(t);
    s.dims[t] = hull[argmin_index(hull, lambda)].dim;
    s.cost += s.dims[t];
  }
  return s;
}

double max_hull_slope(const LossTable& table) {
  double steepest = 0.0;
  for (std::size_t t = 0; t < table.num_tokens(); ++t) {
    const auto hull = table.hull(t);
    // Slopes increase along a lower hull, so the first segment is the steepest.
    if (hull.size() >= 2)
      steepest = std::max(steepest, (hull[0].loss - hull[1].loss) / static_cast<double>(hull[1].dim - hull[0].dim));
  }
  return steepest;
}

Allocation bisect_allocate(const LossTable& table, std::int64_t budget) {
  if (budget < 0) throw ContractError("bisect_allocate: negative budget");
  const auto target = static_cast<std::uint64_t>(budget);
  std::vector<DualProbe> probes;

  InnerSolution best = inner_argmin(table, 0.0);
  probes.push_back({0.0, best.cost});
  double lambda_star = 0.0;
  if (best.cost > target) {
    const double lambda_max = max_hull_slope(table);
    double lo = 0.0;
    double hi = lambda_max;
    best = inner_argmin(table, hi);
    probes.push_back({hi, best.cost});
    // At exactly the steepest slope, rounding in L + lambda * d can still favour
    // the upgrade; widen until the bracket's upper end is truly feasible.
    while (best.cost > target) {
      hi *= 2.0;
      best = inner_argmin(table, hi);
      probes.push_back({hi, best.cost});
    }
    for (int step = 0; step < kMaxBisectionSteps && hi - lo >= kBracketTolerance * lambda_max; ++step) {
      const double mid = 0.5 * (lo + hi);
      InnerSolution s = inner_argmin(table, mid);
      probes.push_back({mid, s.cost});
      if (s.cost <= target) {
        hi = mid;
        best = std::move(s);
      } else {
        lo = mid;
      }
    }
    lambda_star = hi;
  }

  auto dims = greedy_topup(table, std::move(best.dims), target - best.cost);
  Allocation a = finish(table, std::move(dims), budget);
  a.lambda_star = lambda_star;
  a.probes = std::move(probes);
  return a;
}

std::vector<std::uint32_t> greedy_topup(const LossTable& table, std::vector<std::uint32_t> dims,
                                        std::uint64_t leftover) {
  if (dims.size() != table.num_tokens()) throw ContractError("greedy_topup: allocation length mismatch");
  std::vector<std::size_t> position(dims.size());
  for (std::size_t t = 0; t < dims.size(); ++t) {
    const auto hull = table.hull(t);
    const auto it = std::ranges::find(hull, dims[t], &HullPoint::dim);
    if (it == hull.end()) throw ContractError("greedy_topup: token " + std::to_string(t) + " is not on a hull point");
    position[t] = static_cast<std::size_t>(it - hull.begin());
  }

  struct Upgrade {
    double ratio;
    std::size_t token;
  };
  const auto worse = [](const Upgrade& a, const Upgrade& b) {
    return a.ratio < b.ratio || (a.ratio == b.ratio && a.token > b.token);
  };
  std::priority_queue<Upgrade, std::vector<Upgrade>, decltype(worse)> queue(worse);
  const auto push_next = [&](std::size_t t) {
    const auto hull = table.hull(t);
    const std::size_t k = position[t];
    if (k + 1 >= hull.size()) return;
    const double gain = hull[k].loss - hull[k + 1].loss;
    if (gain <= 0.0) return;
    queue.push({gain / static_cast<double>(hull[k + 1].dim - hull[k].dim), t});
  };
  for (std::size_t t = 0; t < dims.size(); ++t) push_next(t);

  // Leftover only shrinks, so an upgrade that does not fit now never will.
  while (!queue.empty() && leftover > 0) {
    const Upgrade u = queue.top();
    queue.pop();
    const auto hull = table.hull(u.token);
    const std::size_t k = position[u.token];
    const std::uint64_t extra = hull[k + 1].dim - hull[k].dim;
    if (extra > leftover) continue;
    leftover -= extra;
    position[u.token] = k + 1;
    dims[u.token] = hull[k + 1].dim;
    push_next(u.token);
  }
  return dims;
}

Allocation exhaustive_oracle(const LossTable& table, std::int64_t budget) {
  if (budget < 0) throw ContractError("exhaustive_oracle: negative budget");
  const std::size_t n = table.num_tokens();
  const std::size_t k = table.dims().size();
  if (std::pow(static_cast<double>(k), static_cast<double>(n)) > kMaxEnumeration)
    throw ContractError("exhaustive_oracle: instance too large to enumerate");
  const auto target = static_cast<std::uint64_t>(budget);
  const auto& dims = table.dims();

  // Lower bound on the loss still to come: every remaining token at its cheapest loss.
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t t = n; t-- > 0;) suffix[t] = suffix[t + 1] + table.repaired(t, k - 1);

  std::vector<std::size_t> choice(n, 0);
  std::vector<std::size_t> best_choice;
  double best = std::numeric_limits<double>::infinity();

  // Iterative DFS in lexicographic order of the dim-index vector.
  std::vector<double> loss_at(n + 1, 0.0);
  std::vector<std::uint64_t> cost_at(n + 1, 0);
  std::size_t depth = 0;
  while (n > 0) {
    const std::size_t j = choice[depth];
    bool descend = false;
    if (j < k) {
      const std::uint64_t cost = cost_at[depth] + dims[j];
      const double loss = loss_at[depth] + table.repaired(depth, j);
      if (cost <= target && loss + suffix[depth + 1] <= best) {
        if (depth + 1 == n) {
          if (loss < best) {
            best = loss;
            best_choice = choice;
          }
        } else {
          cost_at[depth + 1] = cost;
          loss_at[depth + 1] = loss;
          descend = true;
        }
      }
    }
    if (descend) {
      ++depth;
      choice[depth] = 0;
      continue;
    }
    // Dims ascend, so once one is unaffordable so are all later ones at this depth.
    if (j < k && cost_at[depth] + dims[j] <= target) {
      ++choice[depth];
      continue;
    }
    if (depth == 0) break;
    --depth;
    ++choice[depth];
  }

  std::vector<std::uint32_t> out(n, 0);
  for (std::size_t t = 0; t < best_choice.size(); ++t) out[t] = dims[best_choice[t]];
  return finish(table, std::move(out), budget);
}

double primal_value(const LossTable& table, const std::vector<std::uint32_t>& dims) {
  if (dims.size() != table.num_tokens()) throw ContractError("primal_value: allocation length mismatch");
  double total = 0.0;
  for (std::size_t t = 0; t < dims.size(); ++t) total += table.loss_at(t, dims[t]);
  return total;
}

double dual_value(const LossTable& table, double lambda, std::int64_t budget) {
  double total = 0.0;
  for (std::size_t t = 0; t < table.num_tokens(); ++t) {
    const auto hull = table.hull(t);
    const auto& p = hull[argmin_index(hull, lambda)];
    total += p.loss + lambda * p.dim;
  }
  return total - lambda * static_cast<double>(budget);
}

double nonconvexity(const LossTable& table) {
  const auto& dims = table.dims();
  double worst = 0.0;
  for (std::size_t t = 0; t < table.num_tokens(); ++t) {
    const auto hull = table.hull(t);
    // Hull value at dim d by linear interpolation between its vertices.
    const auto hull_at = [&](std::uint32_t d) {
      std::size_t s = 0;
      while (s + 1 < hull.size() && hull[s + 1].dim < d) ++s;
      if (s + 1 >= hull.size() || hull[s].dim >= d) return hull[s].loss;
      const double w = static_cast<double>(d - hull[s].dim) / static_cast<double>(hull[s + 1].dim - hull[s].dim);
      return hull[s].loss + w * (hull[s + 1].loss - hull[s].loss);
    };
    // The step function holds L(d_j) on [d_j, d_{j+1}); its worst gap to the hull
    // is approached at the right end of each step.
    for (std::size_t j = 0; j + 1 < dims.size(); ++j)
      worst = std::max(worst, table.repaired(t, j) - hull_at(dims[j + 1]));
  }
  return worst;
}

DualGapReport gap_report(const LossTable& table, std::int64_t budget, const Allocation& allocation) {
  DualGapReport r;
  r.primal_value = primal_value(table, allocation.dims);
  r.dual_value = dual_value(table, allocation.lambda_star, budget);
  r.gap_bound = r.primal_value - r.dual_value;
  r.relative_gap = r.gap_bound / std::max(r.primal_value, kRelativeGapFloor);
  return r;
}

}  // namespace mixdim
