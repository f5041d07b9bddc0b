#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mixdim/scoring.hpp"

namespace mixdim {

// One evaluation of the dual inner problem during bisection.
struct DualProbe {
  double lambda = 0.0;
  std::uint64_t cost = 0;
};

struct Allocation {
  std::vector<std::uint32_t> dims;  // chosen candidate dim per token
  std::uint64_t total_dim_cost = 0;
  double realized_loss = 0.0;       // sum of repaired L_i(d_i)
  double lambda_star = 0.0;
  bool feasible = false;
  std::vector<DualProbe> probes;    // every lambda the bisection evaluated, in order
};

struct InnerSolution {
  std::vector<std::uint32_t> dims;
  std::uint64_t cost = 0;
};

// Per-token argmin of L_i(d) + lambda * d over the hull; ties go to the smaller dim.
InnerSolution inner_argmin(const LossTable& table, double lambda);

// Steepest hull slope magnitude over all tokens; C(lambda) = 0 at and above it.
double max_hull_slope(const LossTable& table);

// Bisection on lambda in [0, max_hull_slope] until the bracket is narrower than
// 1e-9 * lambda_max (or 200 steps); takes the smallest probed lambda whose
// inner solution fits, then spends the leftover budget with greedy_topup.
Allocation bisect_allocate(const LossTable& table, std::int64_t budget);

// Spends `leftover` dims on hull upgrades, best loss decrease per extra dim
// first (lowest token index on ties), until no upgrade fits. Every token's dim
// must be one of its hull points.
std::vector<std::uint32_t> greedy_topup(const LossTable& table, std::vector<std::uint32_t> dims,
                                        std::uint64_t leftover);

// Exact optimum by depth-first enumeration over repaired losses. Ties resolve
// to the lexicographically smallest dim vector. Refuses instances with more
// than 1e7 assignments.
Allocation exhaustive_oracle(const LossTable& table, std::int64_t budget);

// D(lambda) = sum_i min_d (L_i(d) + lambda d) - lambda B.
double dual_value(const LossTable& table, double lambda, std::int64_t budget);

// Sum of repaired losses at the given dims.
double primal_value(const LossTable& table, const std::vector<std::uint32_t>& dims);

// Largest per-token gap between the repaired step function and its hull over
// the continuous range [0, D]; bounds the duality gap for one budget constraint.
double nonconvexity(const LossTable& table);

struct DualGapReport {
  double primal_value = 0.0;
  double dual_value = 0.0;
  double gap_bound = 0.0;
  double relative_gap = 0.0;
};

DualGapReport gap_report(const LossTable& table, std::int64_t budget, const Allocation& allocation);

}  // namespace mixdim
