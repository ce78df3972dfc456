#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace cnnmap {

/// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels, row-major.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

/// Single-channel 16-bit image (raw depth codes).
struct Image16 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint16_t> pixels;
};

/// Reads 8-bit gray/RGB/RGBA (alpha dropped) PNGs. Throws IoError/ParseError.
Image8 read_png8(const std::filesystem::path& path);
/// Reads a single-channel 16-bit PNG.
Image16 read_png16(const std::filesystem::path& path);

void write_png8(const std::filesystem::path& path, const Image8& image);
void write_png16(const std::filesystem::path& path, const Image16& image);

}  // namespace cnnmap
