#pragma once

#include <string>

#include "n2f/core/image.hpp"

namespace n2f {

// Thin libpng wrappers for the three on-disk formats: 8-bit gray (labels),
// 16-bit gray (depth in millimeters), 8-bit RGB. RGB values map to [0, 1].
// Failures throw DataError naming the file.

void write_png_gray8(const std::string& path, const ImageX8& img);
ImageX8 read_png_gray8(const std::string& path);

void write_png_gray16(const std::string& path, const ImageX16& img);
ImageX16 read_png_gray16(const std::string& path);

void write_png_rgb8(const std::string& path, const RgbImage& img);
RgbImage read_png_rgb8(const std::string& path);

}  // namespace n2f
