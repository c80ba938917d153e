#pragma once

// Architecture manifest for the miniature style-based generator, plus the
// component-partitioned weight container used by checkpoints and the
// component-reset / swap / interpolation operations.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "stylealign/tensor.hpp"

namespace stylealign {

using Real = float;  // production scalar type; double is instantiated in tests

enum class Component { mapping, affine, feat_conv, trgb };

inline const char* component_name(Component c) {
    switch (c) {
        case Component::mapping: return "mapping";
        case Component::affine: return "affine";
        case Component::feat_conv: return "feat_conv";
        case Component::trgb: return "trgb";
    }
    return "?";
}

inline Component component_from_name(const std::string& s) {
    if (s == "mapping") return Component::mapping;
    if (s == "affine") return Component::affine;
    if (s == "feat_conv") return Component::feat_conv;
    if (s == "trgb") return Component::trgb;
    throw std::invalid_argument("unknown component tag: " + s);
}

inline const std::vector<Component>& all_components() {
    static const std::vector<Component> v = {Component::mapping, Component::affine,
                                             Component::feat_conv, Component::trgb};
    return v;
}

// Style-layer kinds, in feed order within one resolution level.
enum class LayerKind { conv0 = 0, conv1 = 1, trgb = 2 };

struct StyleLayer {
    int index;      // position in the W+ / style stacks
    int level;      // resolution this layer feeds
    LayerKind kind;
    int in_width;   // style dimension (modulated input channels)
    int out_width;
};

struct ArchManifest {
    int dz = 64;
    int dw = 64;
    int img_channels = 3;
    int mapping_layers = 3;
    double lrelu_slope = 0.2;
    std::vector<int> level_res = {4, 8, 16, 32};
    std::vector<int> level_width = {64, 64, 32, 16};

    int max_res() const { return level_res.back(); }
    int num_levels() const { return static_cast<int>(level_res.size()); }

    int width_at(int level) const {
        for (size_t i = 0; i < level_res.size(); ++i)
            if (level_res[i] == level) return level_width[i];
        throw std::invalid_argument("no such resolution level: " + std::to_string(level));
    }

    // Two modulated convolutions plus one tRGB per level, in feed order.
    std::vector<StyleLayer> style_layers() const {
        std::vector<StyleLayer> out;
        int idx = 0;
        for (int li = 0; li < num_levels(); ++li) {
            const int res = level_res[static_cast<size_t>(li)];
            const int w = level_width[static_cast<size_t>(li)];
            const int in0 = li == 0 ? level_width[0] : level_width[static_cast<size_t>(li - 1)];
            out.push_back({idx++, res, LayerKind::conv0, in0, w});
            out.push_back({idx++, res, LayerKind::conv1, w, w});
            out.push_back({idx++, res, LayerKind::trgb, w, img_channels});
        }
        return out;
    }

    int num_style_layers() const { return 3 * num_levels(); }

    // Drops every level with resolution > new_res (resolution transfer).
    ArchManifest truncated_to(int new_res) const {
        if (new_res >= max_res())
            throw std::invalid_argument("truncated_to: new resolution must be below " +
                                        std::to_string(max_res()));
        ArchManifest m = *this;
        m.level_res.clear();
        m.level_width.clear();
        for (size_t i = 0; i < level_res.size(); ++i) {
            if (level_res[i] <= new_res) {
                m.level_res.push_back(level_res[i]);
                m.level_width.push_back(level_width[i]);
            }
        }
        if (m.level_res.empty() || m.level_res.back() != new_res)
            throw std::invalid_argument("truncated_to: target resolution not a level");
        return m;
    }

    bool operator==(const ArchManifest& o) const {
        return dz == o.dz && dw == o.dw && img_channels == o.img_channels &&
               mapping_layers == o.mapping_layers && lrelu_slope == o.lrelu_slope &&
               level_res == o.level_res && level_width == o.level_width;
    }
};

// name -> {component tag, resolution level}; level 0 means "none".
struct TensorTag {
    Component component;
    int level = 0;
};

template <typename T>
struct PartitionedWeights {
    std::vector<std::string> order;  // stable tensor ordering
    std::unordered_map<std::string, Tensor<T>> tensors;
    std::unordered_map<std::string, TensorTag> tags;

    void put(const std::string& name, Tensor<T> t, Component c, int level = 0) {
        if (!tensors.count(name)) order.push_back(name);
        tensors[name] = std::move(t);
        tags[name] = {c, level};
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("missing tensor: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    PartitionedWeights clone() const {
        PartitionedWeights out;
        out.order = order;
        out.tags = tags;
        for (const auto& name : order) out.tensors[name] = tensors.at(name).clone();
        return out;
    }

    int64_t count(Component c) const {
        int64_t n = 0;
        for (const auto& [name, tag] : tags)
            if (tag.component == c) ++n;
        return n;
    }
};

// Plain named tensors for the discriminator and auxiliary nets.
template <typename T>
struct NamedTensors {
    std::vector<std::string> order;
    std::unordered_map<std::string, Tensor<T>> tensors;

    void put(const std::string& name, Tensor<T> t) {
        if (!tensors.count(name)) order.push_back(name);
        tensors[name] = std::move(t);
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("missing tensor: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    bool empty() const { return order.empty(); }

    NamedTensors clone() const {
        NamedTensors out;
        out.order = order;
        for (const auto& name : order) out.tensors[name] = tensors.at(name).clone();
        return out;
    }
};

} // namespace stylealign
