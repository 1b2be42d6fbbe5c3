#include <gtest/gtest.h>

#include <cmath>

#include "modnic/metrics.h"
#include "modnic/rng.h"

namespace modnic {
namespace {

Tensor random_image(int size, Rng& rng) {
  std::vector<double> v(3 * size * size);
  for (double& x : v) x = rng.uniform();
  return Tensor({1, 3, size, size}, std::move(v));
}

TEST(Psnr, KnownValues) {
  Rng rng(1);
  const Tensor x = random_image(16, rng);
  EXPECT_EQ(psnr(x, x), 99.0);

  const Tensor a = Tensor::full({1, 1, 4, 4}, 0.5);
  const Tensor b = Tensor::full({1, 1, 4, 4}, 0.6);  // MSE = 0.01
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);

  const Tensor c = Tensor::full({1, 1, 4, 4}, 10.0);
  const Tensor d = Tensor::full({1, 1, 4, 4}, 11.0);  // MSE = 1 on a 0-255 scale
  EXPECT_NEAR(psnr(c, d, 255.0), 20.0 * std::log10(255.0), 1e-12);
  EXPECT_NEAR(psnr(c, d, 255.0), 48.13, 0.005);
  EXPECT_THROW(psnr(a, Tensor({1, 1, 4, 5})), std::invalid_argument);
}

TEST(Mse, Arithmetic) {
  EXPECT_DOUBLE_EQ(mse(Tensor({2}, {0.0, 1.0}), Tensor({2}, {0.5, 0.0})), 0.625);
}

TEST(MsSsim, IdenticalAndSymmetric) {
  Rng rng(2);
  const Tensor x = random_image(64, rng);
  Tensor y = x.detach();
  for (double& v : y.mutable_values()) v = std::clamp(v + 0.05 * rng.normal(), 0.0, 1.0);
  EXPECT_NEAR(ms_ssim(x, x), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(ms_ssim(x, y), ms_ssim(y, x));
  EXPECT_LT(ms_ssim(x, y), 1.0);
}

TEST(MsSsim, HeavyNoiseAgainstFlatImage) {
  Rng rng(3);
  const Tensor noise = random_image(64, rng);
  const Tensor flat = Tensor::full({1, 3, 64, 64}, 0.5);
  EXPECT_LT(ms_ssim(noise, flat), 0.2);
}

TEST(MsSsim, ConstantImagesReduceToTheLuminanceTerm) {
  // With no variance every contrast-structure term is exactly 1 and the
  // luminance term is the same at each scale; only the coarsest exponent
  // survives after renormalizing the two weights in use at 32x32.
  ASSERT_EQ(ms_ssim_scales(32, 32), 2);
  const double c1 = 1e-4;
  const double l = (2 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
  const double expected = std::pow(l, 0.2856 / (0.0448 + 0.2856));
  EXPECT_NEAR(ms_ssim(Tensor::full({1, 3, 32, 32}, 0.5), Tensor::full({1, 3, 32, 32}, 0.6)),
              expected, 1e-12);
}

TEST(MsSsim, ScaleCount) {
  EXPECT_EQ(ms_ssim_scales(256, 256), 5);
  EXPECT_EQ(ms_ssim_scales(176, 300), 5);
  EXPECT_EQ(ms_ssim_scales(175, 300), 4);
  EXPECT_EQ(ms_ssim_scales(22, 22), 2);
  EXPECT_EQ(ms_ssim_scales(11, 11), 1);
  EXPECT_EQ(ms_ssim_scales(10, 64), 0);
  EXPECT_THROW(ms_ssim(Tensor({1, 3, 8, 8}), Tensor({1, 3, 8, 8})), std::invalid_argument);
}

TEST(MsSsimDb, KnownValues) {
  EXPECT_NEAR(msssim_db(0.9), 10.0, 1e-12);
  EXPECT_NEAR(msssim_db(0.99), 20.0, 1e-9);
  EXPECT_EQ(msssim_db(0.0), 0.0);
  EXPECT_EQ(msssim_db(1.0), 99.0);
  EXPECT_THROW(msssim_db(1.5), std::invalid_argument);
}

TEST(EvaluateQuality, CombinesTheMetrics) {
  Rng rng(4);
  const Tensor x = random_image(32, rng);
  const Tensor y = random_image(32, rng);
  const QualityReport q = evaluate_quality(x, y, 0.5);
  EXPECT_EQ(q.mse, mse(x, y));
  EXPECT_EQ(q.psnr_db, psnr(x, y));
  EXPECT_EQ(q.msssim, ms_ssim(x, y));
  EXPECT_EQ(q.msssim_db, msssim_db(q.msssim));
  EXPECT_EQ(q.bpp, 0.5);
}

}  // namespace
}  // namespace modnic
