#pragma once

// PNG grid assembly with fixed row/column semantics: rows = models or
// sources, columns = variants, matching the CSV tables the analyses emit.

#include <string>
#include <vector>

#include "stylealign/image.hpp"

namespace stylealign {

// Row-major list of cells; empty cells render mid-gray.
Image image_grid(const std::vector<Image>& cells, int rows, int cols, int pad = 2);

void save_image_grid(const std::string& path, const std::vector<Image>& cells, int rows,
                     int cols, int pad = 2);

} // namespace stylealign
