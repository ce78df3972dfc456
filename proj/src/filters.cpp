#include "cnnmap/filters.hpp"

#include <algorithm>
#include <cmath>

#include "cnnmap/errors.hpp"

namespace cnnmap {

Image8 render_filter_grid(const Model& model) {
  if (model.layers.empty() || model.layers.front().kind != LayerKind::conv) {
    throw UnsupportedModelError("filter export needs a model whose first layer is conv");
  }
  const auto& layer = model.layers.front();
  const std::size_t k = layer.conv.filters;
  const std::size_t depth = layer.conv.in_depth;
  const std::size_t kh = layer.conv.kernel_h, kw = layer.conv.kernel_w;
  const bool color = depth == 3;
  const std::size_t channel_rows = color ? 1 : depth;
  const std::size_t cell_h = channel_rows * kh + (channel_rows - 1);

  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))));
  const std::size_t rows = (k + cols - 1) / cols;
  Image8 img(cols * (kw + 1) - 1, rows * (cell_h + 1) - 1, color ? 3 : 1, 0);

  const std::size_t filter_len = depth * kh * kw;
  for (std::size_t f = 0; f < k; ++f) {
    auto values = layer.weights.data().subspan(f * filter_len, filter_len);
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const float lo = *lo_it, hi = *hi_it;
    auto normalize = [&](float v) -> std::uint8_t {
      if (!(hi > lo)) return 128;
      return static_cast<std::uint8_t>(std::lround((v - lo) / (hi - lo) * 255.0f));
    };
    const std::size_t x0 = (f % cols) * (kw + 1);
    const std::size_t y0 = (f / cols) * (cell_h + 1);
    for (std::size_t c = 0; c < depth; ++c) {
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          const std::uint8_t v = normalize(values[(c * kh + i) * kw + j]);
          if (color) {
            img.at(x0 + j, y0 + i, c) = v;
          } else {
            img.at(x0 + j, y0 + c * (kh + 1) + i, 0) = v;
          }
        }
      }
    }
  }
  return img;
}

void export_filters(const Model& model, const std::filesystem::path& path) {
  write_png8(path, render_filter_grid(model));
}

}  // namespace cnnmap
