#include "stylealign/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "json_detail.hpp"

namespace stylealign {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', 'A', 'L', 'C'};

struct TableEntry {
    std::string name;
    std::string section;  // "generator", "discriminator", "train_state", "aux"
    Shape shape;
    std::string component;  // generator section only
    int level = 0;
};

void append_tensor(std::vector<float>& payload, const Tensor<float>& t) {
    payload.insert(payload.end(), t.data(), t.data() + t.numel());
}

Tensor<float> take_tensor(const std::vector<float>& payload, size_t& pos, const Shape& shape) {
    const int64_t n = shape_numel(shape);
    if (pos + static_cast<size_t>(n) > payload.size())
        throw std::runtime_error("checkpoint payload truncated");
    Tensor<float> t(shape);
    std::memcpy(t.data(), payload.data() + pos, sizeof(float) * static_cast<size_t>(n));
    pos += static_cast<size_t>(n);
    return t;
}

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw std::runtime_error("checkpoint file truncated");
    return v;
}

json lineage_json(const LineageRecord& l) {
    json chain = json::array();
    for (const auto& e : l.chain)
        chain.push_back({{"domain_id", e.domain_id},
                         {"seed", e.seed},
                         {"epochs", e.epochs},
                         {"kind", e.kind}});
    return json{{"chain", chain}, {"annotations", l.annotations}};
}

LineageRecord lineage_from(const json& j) {
    LineageRecord l;
    for (const auto& e : j.at("chain")) {
        LineageEntry le;
        le.domain_id = e.at("domain_id").get<std::string>();
        le.seed = e.at("seed").get<uint64_t>();
        le.epochs = e.at("epochs").get<int64_t>();
        le.kind = e.at("kind").get<std::string>();
        l.chain.push_back(std::move(le));
    }
    l.annotations = j.at("annotations").get<std::vector<std::string>>();
    return l;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json table = json::array();
    std::vector<float> payload;

    auto add = [&](const std::string& name, const std::string& section, const Tensor<float>& t,
                   const std::string& component = "", int level = 0) {
        json e{{"name", name}, {"section", section}, {"shape", t.shape()}};
        if (!component.empty()) {
            e["component"] = component;
            e["level"] = level;
        }
        table.push_back(std::move(e));
        append_tensor(payload, t);
    };

    for (const auto& name : ckpt.generator.order) {
        const auto& tag = ckpt.generator.tags.at(name);
        add(name, "generator", ckpt.generator.tensors.at(name), component_name(tag.component),
            tag.level);
    }
    for (const auto& name : ckpt.discriminator.order)
        add(name, "discriminator", ckpt.discriminator.tensors.at(name));
    add("w_mean", "aux", ckpt.w_mean);
    if (ckpt.train_state)
        for (const auto& name : ckpt.train_state->tensors.order)
            add(name, "train_state", ckpt.train_state->tensors.tensors.at(name));

    json header{{"format_version", kCheckpointVersion},
                {"manifest", detail_json::manifest_json(ckpt.manifest)},
                {"lineage", lineage_json(ckpt.lineage)},
                {"epoch", ckpt.epoch},
                {"tensors", table}};
    if (ckpt.train_state)
        header["train_state"] = {{"step_g", ckpt.train_state->step_g},
                                 {"step_d", ckpt.train_state->step_d}};
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write(kMagic, 4);
    write_pod<uint32_t>(f, kCheckpointVersion);
    write_pod<uint64_t>(f, hs.size());
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    write_pod<uint64_t>(f, payload.size());
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size() * sizeof(float))));
    write_pod<uint32_t>(f, crc);
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

void save_named_tensors(const std::string& path, const NamedTensors<float>& tensors,
                        const std::string& meta_json) {
    json table = json::array();
    std::vector<float> payload;
    for (const auto& name : tensors.order) {
        const auto& t = tensors.tensors.at(name);
        table.push_back({{"name", name}, {"shape", t.shape()}});
        append_tensor(payload, t);
    }
    json header{{"format_version", kCheckpointVersion},
                {"meta", meta_json},
                {"tensors", table}};
    const std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write: " + path);
    const char magic[4] = {'S', 'A', 'N', 'T'};
    f.write(magic, 4);
    write_pod<uint32_t>(f, kCheckpointVersion);
    write_pod<uint64_t>(f, hs.size());
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    write_pod<uint64_t>(f, payload.size());
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size() * sizeof(float))));
    write_pod<uint32_t>(f, crc);
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::pair<NamedTensors<float>, std::string> load_named_tensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "SANT", 4) != 0)
        throw std::runtime_error("not a tensor archive: " + path);
    const uint32_t version = read_pod<uint32_t>(f);
    if (version != kCheckpointVersion)
        throw std::runtime_error("tensor archive version mismatch: " + path);
    const uint64_t hlen = read_pod<uint64_t>(f);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    const uint64_t plen = read_pod<uint64_t>(f);
    std::vector<float> payload(plen);
    f.read(reinterpret_cast<char*>(payload.data()),
           static_cast<std::streamsize>(plen * sizeof(float)));
    if (!f) throw std::runtime_error("tensor archive truncated: " + path);
    const uint32_t stored_crc = read_pod<uint32_t>(f);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size() * sizeof(float))));
    if (crc != stored_crc) throw std::runtime_error("tensor archive checksum mismatch: " + path);
    json header = json::parse(hs);
    NamedTensors<float> out;
    size_t pos = 0;
    for (const auto& e : header.at("tensors"))
        out.put(e.at("name").get<std::string>(),
                take_tensor(payload, pos, e.at("shape").get<Shape>()));
    return {std::move(out), header.at("meta").get<std::string>()};
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const uint32_t version = read_pod<uint32_t>(f);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint version mismatch: have " + std::to_string(version) +
                                 ", want " + std::to_string(kCheckpointVersion));
    const uint64_t hlen = read_pod<uint64_t>(f);
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw std::runtime_error("checkpoint header truncated: " + path);
    const uint64_t plen = read_pod<uint64_t>(f);
    std::vector<float> payload(plen);
    f.read(reinterpret_cast<char*>(payload.data()),
           static_cast<std::streamsize>(plen * sizeof(float)));
    if (!f) throw std::runtime_error("checkpoint payload truncated: " + path);
    const uint32_t stored_crc = read_pod<uint32_t>(f);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size() * sizeof(float))));
    if (crc != stored_crc)
        throw std::runtime_error("checkpoint checksum mismatch: " + path);

    json header = json::parse(hs);
    Checkpoint ckpt;
    ckpt.manifest = detail_json::manifest_from(header.at("manifest"));
    ckpt.lineage = lineage_from(header.at("lineage"));
    ckpt.epoch = header.at("epoch").get<int64_t>();

    size_t pos = 0;
    std::optional<TrainState> ts;
    if (header.contains("train_state")) {
        ts = TrainState{};
        ts->step_g = header["train_state"].at("step_g").get<int64_t>();
        ts->step_d = header["train_state"].at("step_d").get<int64_t>();
    }
    for (const auto& e : header.at("tensors")) {
        const std::string name = e.at("name").get<std::string>();
        const std::string section = e.at("section").get<std::string>();
        const Shape shape = e.at("shape").get<Shape>();
        Tensor<float> t = take_tensor(payload, pos, shape);
        if (section == "generator") {
            if (!e.contains("component"))
                throw std::runtime_error("generator tensor missing component tag: " + name);
            ckpt.generator.put(name, std::move(t),
                               component_from_name(e.at("component").get<std::string>()),
                               e.at("level").get<int>());
        } else if (section == "discriminator") {
            ckpt.discriminator.put(name, std::move(t));
        } else if (section == "aux" && name == "w_mean") {
            ckpt.w_mean = std::move(t);
        } else if (section == "train_state") {
            if (!ts) throw std::runtime_error("train_state tensor without train_state header");
            ts->tensors.put(name, std::move(t));
        } else {
            throw std::runtime_error("unknown checkpoint section: " + section);
        }
    }
    ckpt.train_state = std::move(ts);
    if (!ckpt.w_mean.defined()) throw std::runtime_error("checkpoint missing w_mean");
    return ckpt;
}

} // namespace stylealign
