#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "desplat/image.hpp"

namespace desplat {

struct EmptyMask : std::runtime_error {
  EmptyMask() : std::runtime_error("mask selects no pixels") {}
};

struct DegenerateVariance : std::runtime_error {
  DegenerateVariance() : std::runtime_error("pearson needs nonzero variance on both sides") {}
};

// 10 log10(1 / MSE) over the (masked) pixels, capped at 99 dB so identical
// images stay finite. The mask, when given, is single-channel and gates all
// channels of a pixel together.
double psnr(const Image& a, const Image& b, const Image* mask = nullptr);

// Sample Pearson correlation.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

struct EvalRow {
  int frame = 0;
  double psnr_full = 0.0;      // rendered sharp vs ground-truth sharp
  double psnr_dynamic = 0.0;   // same, dynamic-mask pixels only (NaN if empty mask)
  double psnr_baseline = 0.0;  // blurry input vs ground-truth sharp
  double beta = 0.0;
  double t_hat = 0.0;
  double exposure_true = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr_full = 0.0;
  double mean_psnr_dynamic = 0.0;
  double mean_psnr_baseline = 0.0;
  double corr_beta_t_hat = 0.0;      // do the estimates track the blur scores
  double corr_t_hat_exposure = 0.0;  // against the true exposures

  std::string to_csv() const;
};

// Scatter of (beta, t_hat) pairs, both normalized to zero mean and unit
// variance, rendered as white dots on black. Purely diagnostic.
Image correlation_scatter(const std::vector<double>& beta, const std::vector<double>& t_hat,
                          int size = 256);

}  // namespace desplat
