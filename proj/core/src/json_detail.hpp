#pragma once

#include <nlohmann/json.hpp>

#include "stylealign/arch.hpp"

namespace stylealign::detail_json {

nlohmann::json manifest_json(const ArchManifest& m);
ArchManifest manifest_from(const nlohmann::json& j);

} // namespace stylealign::detail_json
