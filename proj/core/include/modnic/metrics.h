#ifndef MODNIC_METRICS_H_
#define MODNIC_METRICS_H_

#include <optional>

#include "modnic/tensor.h"

namespace modnic {

// Reported in place of +inf for exact matches.
inline constexpr double kDecibelCap = 99.0;

double mse(const Tensor& x, const Tensor& y);

// 10 log10(peak^2 / MSE), capped at 99 dB.
double psnr(const Tensor& x, const Tensor& y, double peak = 1.0);

// Multi-scale SSIM of [B,C,H,W] (or [C,H,W]) images on a [0, peak] scale,
// computed per channel and averaged. Uses 5 scales when min(H,W) >= 176 and
// otherwise as many as keep the 11-tap window inside the image, with the
// exponents renormalized to sum to one. Throws when min(H,W) < 11.
double ms_ssim(const Tensor& x, const Tensor& y, double peak = 1.0);

// Scales that ms_ssim uses for a given image size (0 when too small).
int ms_ssim_scales(int height, int width);

// -10 log10(1 - v), capped at 99 dB.
double msssim_db(double v);

struct QualityReport {
  double mse = 0.0;
  double psnr_db = 0.0;
  double msssim = 0.0;
  double msssim_db = 0.0;
  std::optional<double> bpp;
};

QualityReport evaluate_quality(const Tensor& original, const Tensor& decoded,
                               std::optional<double> bpp = std::nullopt);

}  // namespace modnic

#endif  // MODNIC_METRICS_H_
