#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cnnmap/errors.hpp"
#include "cnnmap/filters.hpp"
#include "test_util.hpp"

using namespace cnnmap;
using cnnmap::testing::TempDir;

TEST_CASE("64 filters of 11x11 give a 95x95 grid") {
  Model m = build_cnnf(InputSpec::parse("rgb"), CnnfScale::full);
  init_weights(m, HeInit{}, 1);
  const Image8 img = render_filter_grid(m);
  CHECK(img.width == 95);
  CHECK(img.height == 95);
  CHECK(img.channels == 3);
  // Separator row and column between the first two cells.
  for (std::size_t i = 0; i < 95; ++i) {
    CHECK(img.at(11, i, 0) == 0);
    CHECK(img.at(i, 11, 2) == 0);
  }
}

TEST_CASE("per-filter normalization spans 0..255 and constant filters are mid-gray") {
  Model m = build_cnnf(InputSpec::parse("gray"), CnnfScale::reduced);
  init_weights(m, HeInit{}, 2);
  auto& w = m.layers[0].weights;
  // Filter 0 constant.
  for (std::size_t i = 0; i < 11 * 11; ++i) w[i] = 0.3f;
  const Image8 img = render_filter_grid(m);
  CHECK(img.channels == 1);
  CHECK(img.width == 4 * 12 - 1);
  for (std::size_t y = 0; y < 11; ++y)
    for (std::size_t x = 0; x < 11; ++x) CHECK(img.at(x, y, 0) == 128);

  std::uint8_t lo = 255, hi = 0;
  for (std::size_t y = 0; y < 11; ++y) {
    for (std::size_t x = 12; x < 23; ++x) {
      lo = std::min(lo, img.at(x, y, 0));
      hi = std::max(hi, img.at(x, y, 0));
    }
  }
  CHECK(lo == 0);
  CHECK(hi == 255);
}

TEST_CASE("other depths stack channels as gray rows") {
  Model m = build_cnnf(InputSpec::parse("rgbd"), CnnfScale::reduced);
  init_weights(m, HeInit{}, 3);
  const Image8 img = render_filter_grid(m);
  CHECK(img.channels == 1);
  const std::size_t cell_h = 4 * 11 + 3;
  CHECK(img.height == 4 * (cell_h + 1) - 1);
  CHECK(img.width == 4 * 12 - 1);
}

TEST_CASE("export writes a readable PNG") {
  TempDir dir;
  Model m = build_cnnf(InputSpec::parse("rgb"), CnnfScale::reduced);
  init_weights(m, HeInit{}, 4);
  export_filters(m, dir / "filters.png");
  const Image8 back = read_png8(dir / "filters.png");
  const Image8 direct = render_filter_grid(m);
  CHECK(back.width == direct.width);
  CHECK(back.height == direct.height);
  CHECK(back.pixels == direct.pixels);
}

TEST_CASE("first layer must be a convolution") {
  Model m = build_cnnf(InputSpec::parse("rgb"), CnnfScale::reduced);
  m.layers.erase(m.layers.begin());
  CHECK_THROWS_AS(render_filter_grid(m), UnsupportedModelError);
}
