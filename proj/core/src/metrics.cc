#include "modnic/metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace modnic {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr std::array<double, 5> kScaleWeights = {0.0448, 0.2856, 0.3001,
                                                 0.2363, 0.1333};

void require_same(const Tensor& x, const Tensor& y, const char* op) {
  if (x.shape() != y.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(x.shape()) + " vs " +
                                shape_string(y.shape()));
  }
}

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
};

// Separable "valid" Gaussian filtering.
Plane filter(const Plane& p, const std::array<double, kWindow>& g) {
  const int ow = p.w - kWindow + 1;
  const int oh = p.h - kWindow + 1;
  Plane tmp{p.h, ow, std::vector<double>(static_cast<size_t>(p.h) * ow)};
  for (int r = 0; r < p.h; ++r)
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * p.at(r, c + k);
      tmp.v[static_cast<size_t>(r) * ow + c] = acc;
    }
  Plane out{oh, ow, std::vector<double>(static_cast<size_t>(oh) * ow)};
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * tmp.at(r + k, c);
      out.v[static_cast<size_t>(r) * ow + c] = acc;
    }
  return out;
}

Plane downsample(const Plane& p) {
  Plane out{p.h / 2, p.w / 2, {}};
  out.v.resize(static_cast<size_t>(out.h) * out.w);
  for (int r = 0; r < out.h; ++r)
    for (int c = 0; c < out.w; ++c) {
      out.v[static_cast<size_t>(r) * out.w + c] =
          0.25 * (p.at(2 * r, 2 * c) + p.at(2 * r, 2 * c + 1) +
                  p.at(2 * r + 1, 2 * c) + p.at(2 * r + 1, 2 * c + 1));
    }
  return out;
}

// Mean contrast-structure and full SSIM for one scale.
std::pair<double, double> ssim_terms(const Plane& x, const Plane& y,
                                     double peak) {
  static const auto g = gaussian_window();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  Plane xx = x, yy = y, xy = x;
  for (size_t i = 0; i < x.v.size(); ++i) {
    xx.v[i] = x.v[i] * x.v[i];
    yy.v[i] = y.v[i] * y.v[i];
    xy.v[i] = x.v[i] * y.v[i];
  }
  const Plane mx = filter(x, g), my = filter(y, g);
  const Plane sxx = filter(xx, g), syy = filter(yy, g), sxy = filter(xy, g);
  double cs_sum = 0.0, ssim_sum = 0.0;
  for (size_t i = 0; i < mx.v.size(); ++i) {
    const double m1 = mx.v[i], m2 = my.v[i];
    const double v1 = sxx.v[i] - m1 * m1;
    const double v2 = syy.v[i] - m2 * m2;
    const double cov = sxy.v[i] - m1 * m2;
    const double cs = (2.0 * cov + c2) / (v1 + v2 + c2);
    const double lum = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
    cs_sum += cs;
    ssim_sum += lum * cs;
  }
  const double n = static_cast<double>(mx.v.size());
  return {cs_sum / n, ssim_sum / n};
}

}  // namespace

double mse(const Tensor& x, const Tensor& y) {
  require_same(x, y, "mse");
  const auto a = x.values();
  const auto b = y.values();
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const Tensor& x, const Tensor& y, double peak) {
  const double m = mse(x, y);
  if (m == 0.0) return kDecibelCap;
  return std::min(kDecibelCap, 10.0 * std::log10(peak * peak / m));
}

int ms_ssim_scales(int height, int width) {
  int size = std::min(height, width);
  int scales = 0;
  while (scales < static_cast<int>(kScaleWeights.size()) && size >= kWindow) {
    ++scales;
    size /= 2;
  }
  return scales;
}

double ms_ssim(const Tensor& x, const Tensor& y, double peak) {
  require_same(x, y, "ms_ssim");
  if (x.rank() != 3 && x.rank() != 4) {
    throw std::invalid_argument("ms_ssim: expected [C,H,W] or [B,C,H,W]");
  }
  const int h = x.dim(-2);
  const int w = x.dim(-1);
  const int scales = ms_ssim_scales(h, w);
  if (scales == 0) {
    throw std::invalid_argument("ms_ssim: image " + std::to_string(h) + "x" +
                                std::to_string(w) + " smaller than the " +
                                std::to_string(kWindow) + "-tap window");
  }
  double weight_total = 0.0;
  for (int s = 0; s < scales; ++s) weight_total += kScaleWeights[s];

  const size_t plane = static_cast<size_t>(h) * w;
  const size_t planes = x.numel() / plane;
  const auto xv = x.values();
  const auto yv = y.values();
  double acc = 0.0;
  for (size_t p = 0; p < planes; ++p) {
    Plane a{h, w, std::vector<double>(xv.begin() + p * plane,
                                      xv.begin() + (p + 1) * plane)};
    Plane b{h, w, std::vector<double>(yv.begin() + p * plane,
                                      yv.begin() + (p + 1) * plane)};
    double value = 1.0;
    for (int s = 0; s < scales; ++s) {
      const auto [cs, full] = ssim_terms(a, b, peak);
      const double term = s == scales - 1 ? full : cs;
      value *= std::pow(std::max(term, 0.0), kScaleWeights[s] / weight_total);
      if (s + 1 < scales) {
        a = downsample(a);
        b = downsample(b);
      }
    }
    acc += value;
  }
  return std::clamp(acc / static_cast<double>(planes), 0.0, 1.0);
}

double msssim_db(double v) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw std::invalid_argument("msssim_db: value must lie in [0,1]");
  }
  if (v == 1.0) return kDecibelCap;
  return std::min(kDecibelCap, -10.0 * std::log10(1.0 - v));
}

QualityReport evaluate_quality(const Tensor& original, const Tensor& decoded,
                               std::optional<double> bpp) {
  QualityReport r;
  r.mse = mse(original, decoded);
  r.psnr_db = psnr(original, decoded);
  r.msssim = ms_ssim(original, decoded);
  r.msssim_db = msssim_db(r.msssim);
  r.bpp = bpp;
  return r;
}

}  // namespace modnic
