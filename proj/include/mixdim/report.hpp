#pragma once

#include <iosfwd>

#include <json.hpp>

#include "mixdim/pipeline.hpp"

namespace mixdim {

// Stable key names; see README "Report format".
nlohmann::json to_json(const CompressionReport& report);
nlohmann::json to_json(const DualGapReport& gap);
nlohmann::json to_json(const MemoryFootprint& footprint);

// One row per (head, candidate ratio): head,ratio,dim,fraction,total_dims,realized_loss
void write_report_csv(std::ostream& out, const CompressionReport& report);

}  // namespace mixdim
