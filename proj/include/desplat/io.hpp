#pragma once

#include <string>

#include "desplat/image.hpp"

namespace desplat {

// .f32 raster: 8-byte header (u32 width, u32 height, little-endian) followed
// by row-major interleaved float32 samples. Channel count is implied by the
// file size.
void write_f32(const std::string& path, const Image& img);
Image read_f32(const std::string& path);

// Minimal PNG codec (8-bit, grayscale or RGB, non-interlaced). Values are
// clamped to [0,1] and quantized on write; reads return values in [0,1].
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace desplat
