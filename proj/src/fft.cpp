#include "desplat/fft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace desplat {

namespace {

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  // Bit-reversal permutation.
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

void dft_direct(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  std::vector<std::complex<double>> out(n);
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t j = 0; j < n; ++j) {
      double ang = -2.0 * std::numbers::pi * static_cast<double>(k * j) / static_cast<double>(n);
      acc += a[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  a = std::move(out);
}

}  // namespace

void dft_1d(std::vector<std::complex<double>>& seq) {
  if (seq.size() <= 1) return;
  if (is_pow2(seq.size()))
    fft_radix2(seq);
  else
    dft_direct(seq);
}

ComplexGrid dft_2d(const Image& gray) {
  if (gray.channels != 1) throw std::runtime_error("dft_2d expects a single-channel image");
  const int w = gray.width, h = gray.height;
  ComplexGrid grid(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) grid.at(x, y) = std::complex<double>(gray.at(x, y, 0), 0.0);

  std::vector<std::complex<double>> line;
  for (int y = 0; y < h; ++y) {
    line.assign(grid.data.begin() + static_cast<size_t>(y) * w,
                grid.data.begin() + static_cast<size_t>(y + 1) * w);
    dft_1d(line);
    std::copy(line.begin(), line.end(), grid.data.begin() + static_cast<size_t>(y) * w);
  }
  for (int x = 0; x < w; ++x) {
    line.resize(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) line[static_cast<size_t>(y)] = grid.at(x, y);
    dft_1d(line);
    for (int y = 0; y < h; ++y) grid.at(x, y) = line[static_cast<size_t>(y)];
  }
  return grid;
}

ComplexGrid fftshift(const ComplexGrid& grid) {
  const int w = grid.width, h = grid.height;
  ComplexGrid out(w, h);
  const int sx = w / 2, sy = h / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at((x + sx) % w, (y + sy) % h) = grid.at(x, y);
  return out;
}

}  // namespace desplat
