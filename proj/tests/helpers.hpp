#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "desplat/fft.hpp"
#include "desplat/image.hpp"

namespace testutil {

// Textbook O(N^4) 2D DFT, written independently of the library's transform
// so the two can cross-check each other.
inline desplat::ComplexGrid naive_dft_2d(const desplat::Image& gray) {
  const int w = gray.width, h = gray.height;
  desplat::ComplexGrid out(w, h);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      std::complex<double> acc(0.0, 0.0);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double ang = -2.0 * std::numbers::pi *
                       (static_cast<double>(u) * x / w + static_cast<double>(v) * y / h);
          acc += gray.at(x, y, 0) * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      }
      out.at(u, v) = acc;
    }
  }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
