#pragma once

#include <complex>
#include <vector>

#include "desplat/image.hpp"

namespace desplat {

// Row-major w x h complex grid produced by dft_2d and friends.
struct ComplexGrid {
  int width = 0;
  int height = 0;
  std::vector<std::complex<double>> data;

  ComplexGrid() = default;
  ComplexGrid(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h) {}

  std::complex<double>& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  const std::complex<double>& at(int x, int y) const {
    return data[static_cast<size_t>(y) * width + x];
  }
};

// In-place forward DFT of a length-n sequence. Uses iterative radix-2
// Cooley-Tukey when n is a power of two, otherwise falls back to the
// direct O(n^2) sum, so callers may pass any size.
void dft_1d(std::vector<std::complex<double>>& seq);

// Full 2D forward DFT of a single-channel image (rows then columns).
ComplexGrid dft_2d(const Image& gray);

// Swaps quadrants so the zero-frequency bin lands at
// (floor(w/2), floor(h/2)). Matches the usual fftshift convention.
ComplexGrid fftshift(const ComplexGrid& grid);

}  // namespace desplat
