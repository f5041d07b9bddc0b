#include "mixdim/report.hpp"

#include <ostream>

namespace mixdim {

nlohmann::json to_json(const DualGapReport& gap) {
  return {{"primal", gap.primal_value},
          {"dual", gap.dual_value},
          {"gap", gap.gap_bound},
          {"relative_gap", gap.relative_gap}};
}

nlohmann::json to_json(const MemoryFootprint& footprint) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : footprint.per_head)
    heads.push_back({{"token_entries", h.token_entries}, {"projection_entries", h.projection_entries}});
  return {{"token_entries", footprint.token_entries},
          {"projection_entries", footprint.projection_entries},
          {"total", footprint.total},
          {"per_head", heads}};
}

nlohmann::json to_json(const CompressionReport& report) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : report.heads) {
    nlohmann::json entry = {{"histogram", h.histogram}, {"total_dims", h.total_dims}, {"realized_loss", h.realized_loss}};
    if (h.token_budget >= 0) entry["token_budget"] = h.token_budget;
    heads.push_back(std::move(entry));
  }
  return {{"mode", to_string(report.mode)},
          {"kv_size", report.kv_size},
          {"ratios", report.ratios},
          {"candidate_dims", report.candidate_dims},
          {"budget",
           {{"layer_entries", report.budget.layer_entries},
            {"window_entries", report.budget.window_entries},
            {"projection_entries", report.budget.projection_entries},
            {"token_budget", report.budget.token_budget},
            {"units", "scalar entries; token_budget in dim units (one K and one V scalar each)"}}},
          {"heads", heads},
          {"realized_loss", report.realized_loss},
          {"gap", to_json(report.gap)},
          {"nonconvexity", report.nonconvexity},
          {"footprint", to_json(report.footprint)},
          {"attention_error", report.attention_error}};
}

void write_report_csv(std::ostream& out, const CompressionReport& report) {
  const auto old_precision = out.precision(17);
  out << "head,ratio,dim,fraction,total_dims,realized_loss\n";
  for (std::size_t h = 0; h < report.heads.size(); ++h) {
    const auto& head = report.heads[h];
    for (std::size_t j = 0; j < head.histogram.size(); ++j)
      out << h << ',' << report.ratios.at(j) << ',' << report.candidate_dims.at(j) << ',' << head.histogram[j] << ','
          << head.total_dims << ',' << head.realized_loss << '\n';
  }
  out.precision(old_precision);
}

}  // namespace mixdim
