#include "stylealign/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace stylealign {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t quantize(Real v) {
    const double q = std::lround((static_cast<double>(v) + 1.0) * 127.5);
    return static_cast<uint8_t>(std::min(255.0, std::max(0.0, q)));
}

void write_rows(const std::string& path, int w, int h, int color_type,
                const std::vector<std::vector<uint8_t>>& rows) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (const auto& row : rows)
        png_write_row(png, const_cast<png_bytep>(row.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct PngImage {
    int w = 0, h = 0, channels = 0;
    std::vector<uint8_t> data;  // row-major, interleaved
};

PngImage read_rows(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read failed: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_read_update_info(png, info);
    PngImage out;
    out.w = static_cast<int>(png_get_image_width(png, info));
    out.h = static_cast<int>(png_get_image_height(png, info));
    out.channels = static_cast<int>(png_get_channels(png, info));
    out.data.resize(static_cast<size_t>(out.w) * out.h * out.channels);
    std::vector<png_bytep> rows(static_cast<size_t>(out.h));
    for (int y = 0; y < out.h; ++y)
        rows[static_cast<size_t>(y)] = out.data.data() + static_cast<size_t>(y) * out.w * out.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

} // namespace

void write_png(const std::string& path, const Image& img) {
    const int h = static_cast<int>(img.height());
    const int w = static_cast<int>(img.width());
    std::vector<std::vector<uint8_t>> rows(static_cast<size_t>(h),
                                           std::vector<uint8_t>(static_cast<size_t>(w) * 3));
    const Real* p = img.pixels.data();
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                rows[static_cast<size_t>(y)][static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] =
                    quantize(p[c * plane + y * w + x]);
    write_rows(path, w, h, PNG_COLOR_TYPE_RGB, rows);
}

Image read_png(const std::string& path) {
    PngImage raw = read_rows(path);
    if (raw.channels < 3) throw std::runtime_error("expected RGB png: " + path);
    Image img{Tensor<Real>({3, raw.h, raw.w})};
    Real* p = img.pixels.data();
    const int64_t plane = static_cast<int64_t>(raw.h) * raw.w;
    for (int y = 0; y < raw.h; ++y)
        for (int x = 0; x < raw.w; ++x)
            for (int c = 0; c < 3; ++c)
                p[c * plane + y * raw.w + x] = static_cast<Real>(
                    raw.data[(static_cast<size_t>(y) * raw.w + x) * raw.channels +
                             static_cast<size_t>(c)] / 127.5 - 1.0);
    return img;
}

void write_mask_png(const std::string& path, const Tensor<uint8_t>& mask) {
    const int h = static_cast<int>(mask.dim(0));
    const int w = static_cast<int>(mask.dim(1));
    std::vector<std::vector<uint8_t>> rows(static_cast<size_t>(h),
                                           std::vector<uint8_t>(static_cast<size_t>(w)));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            rows[static_cast<size_t>(y)][static_cast<size_t>(x)] = mask[y * w + x];
    write_rows(path, w, h, PNG_COLOR_TYPE_GRAY, rows);
}

Tensor<uint8_t> read_mask_png(const std::string& path) {
    PngImage raw = read_rows(path);
    Tensor<uint8_t> mask({raw.h, raw.w});
    for (int y = 0; y < raw.h; ++y)
        for (int x = 0; x < raw.w; ++x)
            mask[y * raw.w + x] = raw.data[(static_cast<size_t>(y) * raw.w + x) * raw.channels];
    return mask;
}

} // namespace stylealign
