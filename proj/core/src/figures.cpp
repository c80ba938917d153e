#include "stylealign/figures.hpp"

#include <stdexcept>

namespace stylealign {

Image image_grid(const std::vector<Image>& cells, int rows, int cols, int pad) {
    if (cells.empty() || rows * cols < static_cast<int>(cells.size()))
        throw std::invalid_argument("image_grid: bad cell layout");
    int64_t ch = 0, cw = 0;
    for (const auto& c : cells)
        if (c.defined()) {
            ch = c.height();
            cw = c.width();
            break;
        }
    if (ch == 0) throw std::invalid_argument("image_grid: all cells empty");
    const int64_t H = rows * ch + (rows + 1) * pad;
    const int64_t W = cols * cw + (cols + 1) * pad;
    Image out{Tensor<Real>::full({3, H, W}, -0.1f)};
    Real* dst = out.pixels.data();
    for (size_t i = 0; i < cells.size(); ++i) {
        if (!cells[i].defined()) continue;
        const auto& c = cells[i];
        if (c.height() != ch || c.width() != cw)
            throw std::invalid_argument("image_grid: mixed cell resolutions");
        const int64_t r = static_cast<int64_t>(i) / cols;
        const int64_t col = static_cast<int64_t>(i) % cols;
        const int64_t y0 = pad + r * (ch + pad);
        const int64_t x0 = pad + col * (cw + pad);
        const Real* src = c.pixels.data();
        for (int64_t chn = 0; chn < 3; ++chn)
            for (int64_t y = 0; y < ch; ++y)
                for (int64_t x = 0; x < cw; ++x)
                    dst[(chn * H + y0 + y) * W + x0 + x] = src[(chn * ch + y) * cw + x];
    }
    return out;
}

void save_image_grid(const std::string& path, const std::vector<Image>& cells, int rows,
                     int cols, int pad) {
    write_png(path, image_grid(cells, rows, cols, pad));
}

} // namespace stylealign
