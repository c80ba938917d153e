#include "stylealign/checkpoint.hpp"

#include "json_detail.hpp"

namespace stylealign {

using nlohmann::json;

namespace detail_json {

json manifest_json(const ArchManifest& m) {
    return json{{"dz", m.dz},
                {"dw", m.dw},
                {"img_channels", m.img_channels},
                {"mapping_layers", m.mapping_layers},
                {"lrelu_slope", m.lrelu_slope},
                {"level_res", m.level_res},
                {"level_width", m.level_width}};
}

ArchManifest manifest_from(const json& j) {
    ArchManifest m;
    m.dz = j.at("dz").get<int>();
    m.dw = j.at("dw").get<int>();
    m.img_channels = j.at("img_channels").get<int>();
    m.mapping_layers = j.at("mapping_layers").get<int>();
    m.lrelu_slope = j.at("lrelu_slope").get<double>();
    m.level_res = j.at("level_res").get<std::vector<int>>();
    m.level_width = j.at("level_width").get<std::vector<int>>();
    return m;
}

} // namespace detail_json

std::string manifest_to_json(const ArchManifest& m) {
    return detail_json::manifest_json(m).dump();
}

ArchManifest manifest_from_json(const std::string& s) {
    return detail_json::manifest_from(json::parse(s));
}

} // namespace stylealign
