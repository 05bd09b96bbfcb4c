#include "image.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace attenlab {

double bilinear_sample(const double* src, int src_h, int src_w, int stride, double y, double x) {
  const double cy = std::clamp(y, 0.0, static_cast<double>(src_h - 1));
  const double cx = std::clamp(x, 0.0, static_cast<double>(src_w - 1));
  const int y0 = static_cast<int>(cy);
  const int x0 = static_cast<int>(cx);
  const int y1 = std::min(y0 + 1, src_h - 1);
  const int x1 = std::min(x0 + 1, src_w - 1);
  const double fy = cy - y0;
  const double fx = cx - x0;
  const double top = src[(static_cast<int64_t>(y0) * src_w + x0) * stride] * (1.0 - fx) +
                     src[(static_cast<int64_t>(y0) * src_w + x1) * stride] * fx;
  const double bot = src[(static_cast<int64_t>(y1) * src_w + x0) * stride] * (1.0 - fx) +
                     src[(static_cast<int64_t>(y1) * src_w + x1) * stride] * fx;
  return top * (1.0 - fy) + bot * fy;
}

std::vector<double> resize_bilinear(const std::vector<double>& src, int src_h, int src_w,
                                    int channels, int dst_h, int dst_w) {
  if (src_h < 1 || src_w < 1 || dst_h < 1 || dst_w < 1) {
    throw InputError("resize: zero-area image");
  }
  std::vector<double> dst(static_cast<size_t>(dst_h) * dst_w * channels);
  const double sy = static_cast<double>(src_h) / dst_h;
  const double sx = static_cast<double>(src_w) / dst_w;
  for (int y = 0; y < dst_h; ++y) {
    // Half-pixel centers: an identity-size resize samples the integer grid.
    const double src_y = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < dst_w; ++x) {
      const double src_x = (x + 0.5) * sx - 0.5;
      for (int c = 0; c < channels; ++c) {
        dst[(static_cast<int64_t>(y) * dst_w + x) * channels + c] =
            bilinear_sample(src.data() + c, src_h, src_w, channels, src_y, src_x);
      }
    }
  }
  return dst;
}

}  // namespace attenlab
