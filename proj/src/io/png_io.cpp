#include "n2f/io/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "n2f/core/error.hpp"

namespace n2f {

namespace {

struct FileHandle {
  std::FILE* f = nullptr;
  ~FileHandle() {
    if (f) std::fclose(f);
  }
};

[[noreturn]] void fail(const std::string& op, const std::string& path) {
  throw DataError(op + ": " + path);
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Writes rows already packed as bytes (16-bit values big-endian per PNG).
void write_png(const std::string& path, int width, int height, int bit_depth, int color_type,
               const std::vector<std::vector<png_byte>>& rows) {
  FileHandle file;
  file.f = std::fopen(path.c_str(), "wb");
  if (!file.f) fail("cannot open for writing", path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png writer allocation failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png writer allocation failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("png write failed", path);
  }
  png_init_io(png, file.f);
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (const auto& row : rows) {
    png_write_row(png, const_cast<png_bytep>(row.data()));
  }
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

struct DecodedPng {
  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<std::vector<png_byte>> rows;
};

DecodedPng read_png(const std::string& path, int expect_color_type, int expect_bit_depth,
                    bool normalize_to_rgb8) {
  FileHandle file;
  file.f = std::fopen(path.c_str(), "rb");
  if (!file.f) fail("cannot open", path);

  png_byte header[8];
  if (std::fread(header, 1, 8, file.f) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    fail("not a png file", path);
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png reader allocation failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("png reader allocation failed", path);
  }

  DecodedPng out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("png decode failed", path);
  }
  png_init_io(png, file.f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);

  if (normalize_to_rgb8) {
    // Accept palette / gray / alpha variants for RGB ingestion.
    if (out.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (out.color_type == PNG_COLOR_TYPE_GRAY && out.bit_depth < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (out.bit_depth == 16) png_set_strip_16(png);
    if (out.color_type == PNG_COLOR_TYPE_GRAY || out.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_gray_to_rgb(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    out.color_type = png_get_color_type(png, info);
  } else {
    if (out.color_type != expect_color_type || out.bit_depth != expect_bit_depth) {
      png_destroy_read_struct(&png, &info, nullptr);
      fail("unexpected png format (want " + std::to_string(expect_bit_depth) + "-bit gray)",
           path);
    }
  }

  const std::size_t row_bytes = png_get_rowbytes(png, info);
  out.rows.assign(static_cast<std::size_t>(out.height), std::vector<png_byte>(row_bytes));
  std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) row_ptrs[static_cast<std::size_t>(y)] = out.rows[y].data();
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_png_gray8(const std::string& path, const ImageX8& img) {
  const int h = static_cast<int>(img.rows());
  const int w = static_cast<int>(img.cols());
  std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) rows[y][x] = img(y, x);
  }
  write_png(path, w, h, 8, PNG_COLOR_TYPE_GRAY, rows);
}

ImageX8 read_png_gray8(const std::string& path) {
  const DecodedPng d = read_png(path, PNG_COLOR_TYPE_GRAY, 8, false);
  ImageX8 img(d.height, d.width);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) img(y, x) = d.rows[y][x];
  }
  return img;
}

void write_png_gray16(const std::string& path, const ImageX16& img) {
  const int h = static_cast<int>(img.rows());
  const int w = static_cast<int>(img.cols());
  std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(2 * w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      rows[y][2 * x] = static_cast<png_byte>(img(y, x) >> 8);  // big-endian
      rows[y][2 * x + 1] = static_cast<png_byte>(img(y, x) & 0xff);
    }
  }
  write_png(path, w, h, 16, PNG_COLOR_TYPE_GRAY, rows);
}

ImageX16 read_png_gray16(const std::string& path) {
  const DecodedPng d = read_png(path, PNG_COLOR_TYPE_GRAY, 16, false);
  ImageX16 img(d.height, d.width);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      img(y, x) = static_cast<std::uint16_t>((d.rows[y][2 * x] << 8) | d.rows[y][2 * x + 1]);
    }
  }
  return img;
}

void write_png_rgb8(const std::string& path, const RgbImage& img) {
  const int h = static_cast<int>(img.height());
  const int w = static_cast<int>(img.width());
  std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(3 * w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      rows[y][3 * x] = to_byte(img.r(y, x));
      rows[y][3 * x + 1] = to_byte(img.g(y, x));
      rows[y][3 * x + 2] = to_byte(img.b(y, x));
    }
  }
  write_png(path, w, h, 8, PNG_COLOR_TYPE_RGB, rows);
}

RgbImage read_png_rgb8(const std::string& path) {
  const DecodedPng d = read_png(path, PNG_COLOR_TYPE_RGB, 8, true);
  if (d.color_type != PNG_COLOR_TYPE_RGB || d.bit_depth != 8) {
    fail("could not normalize to 8-bit rgb", path);
  }
  RgbImage img;
  img.r.resize(d.height, d.width);
  img.g.resize(d.height, d.width);
  img.b.resize(d.height, d.width);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      img.r(y, x) = d.rows[y][3 * x] / 255.0;
      img.g(y, x) = d.rows[y][3 * x + 1] / 255.0;
      img.b(y, x) = d.rows[y][3 * x + 2] / 255.0;
    }
  }
  return img;
}

}  // namespace n2f
