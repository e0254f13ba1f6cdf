#pragma once

#include <string>
#include <string_view>

#include "slimpart/attribution.hpp"
#include "slimpart/placement.hpp"

// Versioned JSON documents persisted between pipeline stages. Paths are byte
// strings; anything that is not valid UTF-8, and '%' itself, is written as
// %HH so the documents stay valid JSON.
namespace slimpart::document {

inline constexpr int kAnalysisVersion = 1;

std::string escape_bytes(std::string_view s);
std::string unescape_bytes(std::string_view s);

std::string dump_analysis(const attribution::Analysis& a);
attribution::Analysis parse_analysis(std::string_view text);

std::string dump_plan(const placement::PlacementPlan& p);
placement::PlacementPlan parse_plan(std::string_view text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace slimpart::document
