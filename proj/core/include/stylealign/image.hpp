#pragma once

// Images are [3, H, W] tensors with values in [-1, 1]; batches are stacked
// along a leading axis. PNG round-trips quantize to 8 bits.

#include <cmath>
#include <string>
#include <vector>

#include "stylealign/arch.hpp"
#include "stylealign/tensor.hpp"

namespace stylealign {

struct Image {
    Tensor<Real> pixels;  // [3, H, W], values in [-1, 1]

    int64_t height() const { return pixels.dim(1); }
    int64_t width() const { return pixels.dim(2); }
    bool defined() const { return pixels.defined(); }
};

using ImageBatch = Tensor<Real>;  // [B, 3, H, W]

inline ImageBatch stack_images(const std::vector<Image>& imgs) {
    if (imgs.empty()) throw std::invalid_argument("stack_images: empty");
    const auto& s = imgs[0].pixels.shape();
    ImageBatch out({static_cast<int64_t>(imgs.size()), s[0], s[1], s[2]});
    const int64_t n = imgs[0].pixels.numel();
    for (size_t b = 0; b < imgs.size(); ++b) {
        if (imgs[b].pixels.shape() != s)
            throw std::invalid_argument("stack_images: mixed resolutions");
        std::copy(imgs[b].pixels.data(), imgs[b].pixels.data() + n,
                  out.data() + static_cast<int64_t>(b) * n);
    }
    return out;
}

inline Image image_at(const ImageBatch& batch, int64_t b) {
    const auto& s = batch.shape();
    Image img{Tensor<Real>({s[1], s[2], s[3]})};
    const int64_t n = img.pixels.numel();
    std::copy(batch.data() + b * n, batch.data() + (b + 1) * n, img.pixels.data());
    return img;
}

inline std::vector<Image> unstack_images(const ImageBatch& batch) {
    std::vector<Image> out;
    for (int64_t b = 0; b < batch.dim(0); ++b) out.push_back(image_at(batch, b));
    return out;
}

// 8-bit RGB PNG IO (image_io.cpp).
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Single-channel PNG holding small integer labels (region ids).
void write_mask_png(const std::string& path, const Tensor<uint8_t>& mask);
Tensor<uint8_t> read_mask_png(const std::string& path);

// Pixel standard deviation over a batch, a plain contrast measure.
inline double pixel_std(const ImageBatch& batch) {
    const Real* p = batch.data();
    const int64_t n = batch.numel();
    double s = 0, s2 = 0;
    for (int64_t i = 0; i < n; ++i) {
        s += p[i];
        s2 += static_cast<double>(p[i]) * p[i];
    }
    const double mean = s / static_cast<double>(n);
    return std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - mean * mean));
}

} // namespace stylealign
