#pragma once

// Procedural image domains with shared ground-truth factors and exact
// per-part segmentation masks. Three families: roundface (domain A), boxface
// (a nearby domain with the same part layout, rendered angular), and scene (a
// distant domain sharing only the global rotation factor).

#include <array>
#include <string>
#include <vector>

#include "stylealign/image.hpp"
#include "stylealign/rng.hpp"
#include "stylealign/tensor.hpp"

namespace stylealign {

struct FactorVector {
    double rotation = 0;                          // degrees, [-40, 40]
    double hue = 0;                               // [0, 1)
    std::array<double, 3> part_scale = {1, 1, 1}; // eyes, ears, body; [0.5, 1.5]
    int texture_id = 0;                           // {0: plain, 1: stripes, 2: rings, 3: dots}
    int shape_family = 0;                         // {0, 1}
};

struct DomainSpec {
    std::string family;  // "roundface", "boxface", "scene"
    int resolution = 32;
};

struct FactorDataset {
    std::string domain_id;
    std::string family;
    int resolution = 32;
    uint64_t seed = 0;
    std::string transform = "none";
    int transform_k = 0;

    std::vector<std::string> regions;  // region id -> name; id 0 is background
    std::vector<Image> images;
    std::vector<FactorVector> factors;
    std::vector<Tensor<uint8_t>> masks;  // [H, W] of region ids

    int64_t size() const { return static_cast<int64_t>(images.size()); }
};

const std::vector<std::string>& face_regions();   // background, body, ears, eyes
const std::vector<std::string>& scene_regions();  // background, ground, sun

// Hue bands used by the zero-shot classification protocol.
bool hue_is_red(double hue);
bool hue_is_blue(double hue);

Image render_image(const std::string& family, const FactorVector& f, int res);
Tensor<uint8_t> render_mask(const std::string& family, const FactorVector& f, int res);

FactorDataset gen_domain(const DomainSpec& spec, int64_t count, uint64_t seed);

// shift_right / shift_down by k pixels (background fill), or flip_updown.
// Images and masks transform identically; factors are untouched.
FactorDataset transform_dataset(const FactorDataset& ds, const std::string& transform, int k = 0);
Image transform_image(const Image& img, const std::string& transform, int k);
Tensor<uint8_t> transform_mask(const Tensor<uint8_t>& mask, const std::string& transform, int k);

void save_dataset(const FactorDataset& ds, const std::string& dir);
FactorDataset load_dataset(const std::string& dir);

} // namespace stylealign
