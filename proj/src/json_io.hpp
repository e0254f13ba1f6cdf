#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "slimpart/document.hpp"
#include "slimpart/placement.hpp"
#include "slimpart/rsrc.hpp"

// JSON conversions shared by the document and manifest writers.
namespace slimpart::document::detail {

using nlohmann::json;

json bytes(std::string_view s);
std::string text(const json& j);

json to_json(const rsrc::NetAddress& a);
rsrc::NetAddress net_from(const json& j);
json to_json(const rsrc::Resource& r);
rsrc::Resource resource_from(const json& j);
json to_json(const rsrc::ResourceSet& s);
rsrc::ResourceSet set_from(const json& j);
json to_json(const placement::FileMeta& m);
placement::FileMeta meta_from(const json& j);

template <typename Range>
json string_list(const Range& v) {
  json a = json::array();
  for (const auto& s : v) a.push_back(bytes(s));
  return a;
}

std::vector<std::string> strings_from(const json& j);

}  // namespace slimpart::document::detail
