#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

#include "cnnmap/errors.hpp"
#include "cnnmap/image.hpp"

namespace cnnmap {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

struct Decoded {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> rows;  // packed, big-endian for 16-bit
};

// libpng reports errors through longjmp; keep this function free of
// non-trivial destructors between setjmp and the libpng calls.
bool decode(std::FILE* f, Decoded& out, bool want16) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, f);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (!want16 && depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.rows.resize(rowbytes * out.height);
  for (png_uint_32 y = 0; y < out.height; ++y) {
    png_read_row(png, out.rows.data() + y * rowbytes, nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool encode(std::FILE* f, png_uint_32 width, png_uint_32 height, int bit_depth, int color_type,
            const std::uint8_t* rows, std::size_t rowbytes) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < height; ++y) {
    png_write_row(png, const_cast<std::uint8_t*>(rows + y * rowbytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

Image8 read_png8(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  Decoded d;
  if (!decode(f.get(), d, false)) throw ParseError("cannot decode PNG '" + path.string() + "'");
  if (d.channels != 1 && d.channels != 3) {
    throw ParseError("unsupported PNG channel layout in '" + path.string() + "'");
  }
  Image8 img(d.width, d.height, static_cast<std::size_t>(d.channels));
  img.pixels = std::move(d.rows);
  return img;
}

Image16 read_png16(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  Decoded d;
  if (!decode(f.get(), d, true)) throw ParseError("cannot decode PNG '" + path.string() + "'");
  if (d.channels != 1 || d.bit_depth != 16) {
    throw ParseError("expected a single-channel 16-bit PNG: '" + path.string() + "'");
  }
  Image16 img;
  img.width = d.width;
  img.height = d.height;
  img.pixels.resize(static_cast<std::size_t>(d.width) * d.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<std::uint16_t>((d.rows[2 * i] << 8) | d.rows[2 * i + 1]);
  }
  return img;
}

void write_png8(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw IoError("write_png8: channels must be 1 or 3");
  FilePtr f = open_file(path, "wb");
  const int color = image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  if (!encode(f.get(), static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8, color,
              image.pixels.data(), image.width * image.channels)) {
    throw IoError("failed writing PNG '" + path.string() + "'");
  }
}

void write_png16(const std::filesystem::path& path, const Image16& image) {
  std::vector<std::uint8_t> rows(image.pixels.size() * 2);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    rows[2 * i] = static_cast<std::uint8_t>(image.pixels[i] >> 8);
    rows[2 * i + 1] = static_cast<std::uint8_t>(image.pixels[i] & 0xFF);
  }
  FilePtr f = open_file(path, "wb");
  if (!encode(f.get(), static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 16,
              PNG_COLOR_TYPE_GRAY, rows.data(), image.width * 2)) {
    throw IoError("failed writing PNG '" + path.string() + "'");
  }
}

}  // namespace cnnmap
