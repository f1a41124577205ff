#pragma once

#include <string>

#include "kv/core/image.hpp"

namespace kv {

// 8-bit grayscale PNG. Float images are mapped [0,1] -> [0,255] with clamping.
void write_png_gray(const std::string& path, const ImageU8& img);
void write_png_gray(const std::string& path, const ImageF& img);

// Reads an 8-bit grayscale PNG written by the functions above (also accepts
// any non-interlaced 8-bit grayscale file). Throws std::runtime_error on
// malformed input.
ImageU8 read_png_gray(const std::string& path);

// Raw little-endian dumps for bit-exact tests.
void write_raw(const std::string& path, const ImageF& img);
void write_raw(const std::string& path, const ImageU8& img);
ImageF read_raw_f32(const std::string& path, int w, int h);
ImageU8 read_raw_u8(const std::string& path, int w, int h);

}  // namespace kv
