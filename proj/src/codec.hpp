#pragma once

#include <cstdint>
#include <vector>

#include "image.hpp"

namespace attenlab {

// Sniffs the container from the magic bytes and decodes. PNG (8-bit gray,
// gray+alpha, palette, RGB, RGBA; non-interlaced) and baseline sequential
// JPEG are understood; alpha is dropped. Malformed input raises FormatError
// with the offending byte offset.
Image decode_raster(const std::vector<uint8_t>& bytes);

std::vector<uint8_t> encode_png(const Image& image);
std::vector<uint8_t> encode_png_gray(const GrayImage& image);

bool looks_like_png(const std::vector<uint8_t>& bytes);
bool looks_like_jpeg(const std::vector<uint8_t>& bytes);

}  // namespace attenlab
