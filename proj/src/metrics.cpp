#include "desplat/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace desplat {

double psnr(const Image& a, const Image& b, const Image* mask) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr images differ in shape");
  if (mask && (mask->width != a.width || mask->height != a.height))
    throw std::invalid_argument("psnr mask differs in size");

  double sq = 0.0;
  size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (mask && mask->at(x, y) <= 0.5) continue;
      for (int c = 0; c < a.channels; ++c) {
        double d = a.at(x, y, c) - b.at(x, y, c);
        sq += d * d;
        ++n;
      }
    }
  if (n == 0) throw EmptyMask();
  double mse = sq / static_cast<double>(n);
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("pearson needs two equal-length series");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw DegenerateVariance();
  return sxy / std::sqrt(sxx * syy);
}

std::string EvalReport::to_csv() const {
  std::string out = "frame,psnr_full,psnr_dynamic,psnr_baseline,beta,t_hat,exposure_true\n";
  char buf[256];
  for (const EvalRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.frame,
                  r.psnr_full, r.psnr_dynamic, r.psnr_baseline, r.beta, r.t_hat,
                  r.exposure_true);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.17g,%.17g,%.17g,,,\n", mean_psnr_full,
                mean_psnr_dynamic, mean_psnr_baseline);
  out += buf;
  std::snprintf(buf, sizeof(buf), "corr_beta_t_hat,%.17g,,,,,\n", corr_beta_t_hat);
  out += buf;
  std::snprintf(buf, sizeof(buf), "corr_t_hat_exposure,%.17g,,,,,\n", corr_t_hat_exposure);
  out += buf;
  return out;
}

Image correlation_scatter(const std::vector<double>& beta, const std::vector<double>& t_hat,
                          int size) {
  Image img(size, size, 1);
  if (beta.size() != t_hat.size() || beta.size() < 2) return img;

  auto normalized = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    double sd = std::sqrt(var / static_cast<double>(v.size()));
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = sd > 0.0 ? (v[i] - mean) / sd : 0.0;
    return out;
  };
  std::vector<double> xs = normalized(beta);
  std::vector<double> ys = normalized(t_hat);

  // +-3 sigma window, y up.
  for (size_t i = 0; i < xs.size(); ++i) {
    int px = static_cast<int>(std::lround((xs[i] + 3.0) / 6.0 * (size - 1)));
    int py = static_cast<int>(std::lround((3.0 - ys[i]) / 6.0 * (size - 1)));
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        int qx = px + dx, qy = py + dy;
        if (qx >= 0 && qx < size && qy >= 0 && qy < size) img.at(qx, qy) = 1.0;
      }
  }
  return img;
}

}  // namespace desplat
