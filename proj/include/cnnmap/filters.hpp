#pragma once

#include <filesystem>

#include "cnnmap/image.hpp"
#include "cnnmap/model.hpp"

namespace cnnmap {

/// Grid of the first-layer filters: ceil(sqrt(k)) columns, 1-pixel black
/// separators, each filter min-max normalized to [0, 255] on its own
/// (a constant filter renders as 128). Depth-3 filters render in color,
/// depth-1 in grayscale; other depths stack their channels as grayscale
/// rows inside each cell. Throws UnsupportedModelError when the first
/// layer is not a convolution.
Image8 render_filter_grid(const Model& model);

/// Writes render_filter_grid as an 8-bit PNG.
void export_filters(const Model& model, const std::filesystem::path& path);

}  // namespace cnnmap
