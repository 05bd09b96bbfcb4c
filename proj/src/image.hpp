#pragma once

#include <cstdint>
#include <vector>

namespace attenlab {

// 8-bit RGB raster, row-major, interleaved channels.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> rgb;  // height * width * 3

  bool empty() const { return height == 0 || width == 0; }
  uint8_t* pixel(int y, int x) { return rgb.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const uint8_t* pixel(int y, int x) const {
    return rgb.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
};

// Single-channel 8-bit raster (masks, grayscale heatmap renders).
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;  // height * width
};

// Bilinear sample with half-pixel centers; src is a single channel with the
// given stride between consecutive values of that channel.
double bilinear_sample(const double* src, int src_h, int src_w, int stride, double y, double x);

// Bilinear resize of interleaved data with `channels` channels.
std::vector<double> resize_bilinear(const std::vector<double>& src, int src_h, int src_w,
                                    int channels, int dst_h, int dst_w);

}  // namespace attenlab
