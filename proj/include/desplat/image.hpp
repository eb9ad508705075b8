#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace desplat {

// Row-major interleaved image buffer, double precision.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }

  size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

// 0.299 R + 0.587 G + 0.114 B; single-channel images pass through.
Image luminance(const Image& rgb);

// Separable Gaussian blur, kernel truncated at 3 sigma, edges clamped.
// radius <= 0 returns the input unchanged.
Image gaussian_blur(const Image& img, double sigma);

}  // namespace desplat
