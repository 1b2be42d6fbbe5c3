#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "modnic/rd_model.h"
#include "modnic/rng.h"

namespace modnic {
namespace {

constexpr double kAlpha = 39.301;
constexpr double kBeta = 1.296;

std::vector<RdSample> exact_samples(double alpha, double beta, std::vector<double> lambdas) {
  std::vector<RdSample> s;
  for (double l : lambdas) {
    s.push_back({l, rate_of_lambda(l, alpha, beta), distortion_of_lambda(l, alpha, beta),
                 RdMetric::kMse});
  }
  return s;
}

TEST(RdLaws, LambdaOfRate) {
  EXPECT_EQ(lambda_of_rate(0.0, kAlpha, kBeta), 0.0);
  // Long-double evaluation of alpha * (exp(beta) - 1).
  const long double ref = 39.301L * (std::exp(1.296L) - 1.0L);
  EXPECT_NEAR(lambda_of_rate(1.0, kAlpha, kBeta), static_cast<double>(ref), 1e-10);
  EXPECT_NEAR(lambda_of_rate(1.0, kAlpha, kBeta), 104.33, 0.005);
  for (double r : {0.01, 0.3, 1.0, 2.5, 7.0}) {
    EXPECT_NEAR(rate_of_lambda(lambda_of_rate(r, kAlpha, kBeta), kAlpha, kBeta), r, 1e-12);
  }
  EXPECT_THROW(lambda_of_rate(-0.1, kAlpha, kBeta), std::invalid_argument);
  EXPECT_THROW(rate_of_lambda(1.0, -1.0, kBeta), std::invalid_argument);
}

TEST(RdLaws, DistortionOfLambda) {
  const double d = distortion_of_lambda(kAlpha, kAlpha, kBeta);
  EXPECT_NEAR(d, std::log(2.0) / (kAlpha * kBeta), 1e-15);
  EXPECT_NEAR(d, 0.01361, 5e-6);
  EXPECT_LT(distortion_of_lambda(1e9, kAlpha, kBeta), 1e-9);
  double prev = distortion_of_lambda(1.0, kAlpha, kBeta);
  for (int l = 2; l <= 256; ++l) {
    const double cur = distortion_of_lambda(l, kAlpha, kBeta);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  EXPECT_THROW(distortion_of_lambda(0.0, kAlpha, kBeta), std::invalid_argument);
}

TEST(RdLaws, SlopeIdentityAtLambdaEqualsAlpha) {
  // dR/dlambda = 1/(beta (alpha + lambda)), dD/dlambda = -1/(beta lambda (alpha + lambda)).
  const double l = kAlpha;
  const double dr = 1.0 / (kBeta * (kAlpha + l));
  const double dd = -1.0 / (kBeta * l * (kAlpha + l));
  EXPECT_NEAR(-dr / dd, l, 1e-12);
}

TEST(Consistency, WithinToleranceForManyCoefficients) {
  std::vector<double> grid;
  for (int l = 1; l <= 256; ++l) grid.push_back(l);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const double a = std::exp(rng.uniform(std::log(0.1), std::log(1e4)));
    const double b = std::exp(rng.uniform(std::log(0.05), std::log(20.0)));
    EXPECT_LE(consistency_check(a, b, grid), 1e-3) << a << " " << b;
  }
  EXPECT_LE(consistency_check(kAlpha, kBeta, grid), 1e-6);
}

TEST(Consistency, SecondOrderConvergence) {
  const std::vector<double> grid = {1.0, 16.0, 100.0, 256.0};
  const double e1 = consistency_check(kAlpha, kBeta, grid, 1e-2);
  const double e2 = consistency_check(kAlpha, kBeta, grid, 5e-3);
  EXPECT_GT(e1, 1e-8);
  EXPECT_NEAR(e1 / e2, 4.0, 0.2);
}

TEST(Fit, RecoversPaperCoefficientsFromExactSamples) {
  const auto s = exact_samples(kAlpha, kBeta, {1, 4, 8, 16, 32, 64, 100});
  for (RdForm form : {RdForm::kDOfLambda, RdForm::kLambdaOfR}) {
    const auto p = fit_rd(s, form);
    EXPECT_NEAR(p.alpha / kAlpha, 1.0, 0.01);
    EXPECT_NEAR(p.beta / kBeta, 1.0, 0.01);
    EXPECT_GT(p.r_squared, 0.999999);
    EXPECT_GT(p.converged_starts, 0);
  }
  const auto ms = preset_params(RdMetric::kMsSsim);
  EXPECT_EQ(ms.alpha, 89.072);
  EXPECT_EQ(ms.beta, 1.225);
  const auto p = fit_rd(exact_samples(ms.alpha, ms.beta, {1, 4, 8, 16, 32, 64, 100}),
                        RdForm::kDOfLambda);
  EXPECT_NEAR(p.alpha / ms.alpha, 1.0, 0.01);
  EXPECT_NEAR(p.beta / ms.beta, 1.0, 0.01);
}

TEST(Fit, NoisySamples) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = exact_samples(kAlpha, kBeta, {1, 2, 4, 8, 16, 32, 64, 100, 128, 256});
    for (auto& x : s) x.distortion *= 1.0 + 0.01 * rng.normal();
    const auto p = fit_rd(s, RdForm::kDOfLambda);
    EXPECT_NEAR(p.alpha / kAlpha, 1.0, 0.10);
    EXPECT_NEAR(p.beta / kBeta, 1.0, 0.10);
    EXPECT_GE(p.r_squared, 0.99);
  }
}

TEST(Fit, RejectsBadSampleSets) {
  auto s = exact_samples(kAlpha, kBeta, {1, 4, 4});
  EXPECT_THROW(fit_rd(s, RdForm::kDOfLambda), std::invalid_argument);
  EXPECT_THROW(fit_rd(exact_samples(kAlpha, kBeta, {1, 4}), RdForm::kDOfLambda),
               std::invalid_argument);
  auto mixed = exact_samples(kAlpha, kBeta, {1, 4, 8});
  mixed[1].metric = RdMetric::kMsSsim;
  EXPECT_THROW(fit_rd(mixed, RdForm::kDOfLambda), std::invalid_argument);
}

// A smooth monotone stand-in for an encoder.
double model_bpp(double lambda) { return 0.1 + rate_of_lambda(lambda, 30.0, 1.6) * 1.05; }

TEST(RateControl, OneShotUsesTheModel) {
  RdModelParams p;
  p.alpha = 30.0;
  p.beta = 1.6;
  const double target = model_bpp(40.0);
  const auto r = rate_control(target, model_bpp, p, 0);
  // Range probes at both ends, then exactly one encode.
  EXPECT_EQ(r.trace.size(), 3u);
  EXPECT_NEAR(r.lambda, std::clamp(lambda_of_rate(target, 30.0, 1.6), 1.0, 256.0), 1e-9);
  EXPECT_NEAR(r.bre, std::abs(r.achieved_bpp - target) / target, 1e-15);
}

TEST(RateControl, RefinementConvergesToAPriorEncode) {
  RdModelParams p;
  p.alpha = 60.0;
  p.beta = 1.0;
  const double target = model_bpp(37.0);
  const auto r = rate_control(target, model_bpp, p, 8);
  EXPECT_LT(r.bre, 1e-3);
  EXPECT_NEAR(r.lambda, 37.0, 1.0);
  const auto one = rate_control(target, model_bpp, p, 0);
  EXPECT_LE(r.bre, one.bre);
}

TEST(RateControl, RejectsUnreachableTargets) {
  RdModelParams p;
  p.alpha = 30.0;
  p.beta = 1.6;
  EXPECT_THROW(rate_control(model_bpp(256.0) * 10.0, model_bpp, p, 3), RateRangeError);
  EXPECT_THROW(rate_control(model_bpp(1.0) * 0.5, model_bpp, p, 3), RateRangeError);
  EXPECT_THROW(rate_control(-1.0, model_bpp, p, 3), std::invalid_argument);
}

TEST(RateControl, NonMonotoneEncoderIsReported) {
  RdModelParams p;
  p.alpha = 30.0;
  p.beta = 1.6;
  // Endpoints bracket the target but the interior overshoots both.
  auto hump = [](double l) { return l <= 1.0 ? 0.1 : (l >= 256.0 ? 1.0 : 2.0); };
  EXPECT_THROW(rate_control(0.5, hump, p, 3), std::runtime_error);
}

std::vector<std::pair<double, double>> curve() {
  std::vector<std::pair<double, double>> c;
  for (double r : {0.1, 0.2, 0.4, 0.8, 1.2}) c.emplace_back(r, 30.0 + 6.0 * std::log2(r));
  return c;
}

TEST(BdRate, IdenticalCurvesGiveZero) {
  EXPECT_NEAR(bd_rate(curve(), curve()), 0.0, 1e-9);
}

TEST(BdRate, UniformRateShift) {
  auto b = curve();
  for (auto& [r, q] : b) r *= 1.10;
  EXPECT_NEAR(bd_rate(curve(), b), 10.0, 0.5);
  auto c = curve();
  for (auto& [r, q] : c) r *= 0.8;
  EXPECT_NEAR(bd_rate(curve(), c), -20.0, 0.5);
}

TEST(BdRate, ReversedArgumentsInvertTheRateRatio) {
  Rng rng(3);
  auto b = curve();
  for (auto& [r, q] : b) {
    r *= 1.0 + 0.3 * rng.uniform();
    q += 0.3 * rng.normal();
  }
  std::ranges::sort(b);
  const double ab = 1.0 + bd_rate(curve(), b) / 100.0;
  const double ba = 1.0 + bd_rate(b, curve()) / 100.0;
  EXPECT_NEAR(ab * ba, 1.0, 1e-9);
}

TEST(BdRate, RejectsShortOrDisjointCurves) {
  auto shortc = curve();
  shortc.resize(3);
  EXPECT_THROW(bd_rate(shortc, curve()), std::invalid_argument);
  auto far = curve();
  for (auto& [r, q] : far) q += 100.0;
  EXPECT_THROW(bd_rate(curve(), far), std::invalid_argument);
}

TEST(RdSamples, CsvRoundTrip) {
  const auto s = exact_samples(kAlpha, kBeta, {1, 16, 256});
  const std::string text = format_rd_samples(s);
  EXPECT_EQ(text.substr(0, text.find('\n')), "lambda,bpp,distortion,metric");
  const auto back = parse_rd_samples(text);
  ASSERT_EQ(back.size(), s.size());
  for (size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].lambda, s[i].lambda);
    EXPECT_EQ(back[i].bpp, s[i].bpp);
    EXPECT_EQ(back[i].distortion, s[i].distortion);
    EXPECT_EQ(back[i].metric, s[i].metric);
  }
  const auto path = std::filesystem::temp_directory_path() / "modnic_rd_samples_test.csv";
  write_rd_samples(path, s);
  EXPECT_EQ(read_rd_samples(path).size(), 3u);
  std::filesystem::remove(path);
  EXPECT_THROW(parse_rd_samples("lambda,bpp\n1,2\n"), std::exception);
  EXPECT_THROW(parse_rd_samples("lambda,bpp,distortion,metric\n1,x,2,mse\n"), std::exception);
  EXPECT_THROW(parse_rd_samples("lambda,bpp,distortion,metric\n1,1,2,psnr\n"), std::exception);
}

TEST(RdMetricNames, ParseAndFormat) {
  EXPECT_EQ(parse_rd_metric("mse"), RdMetric::kMse);
  EXPECT_EQ(parse_rd_metric("msssim"), RdMetric::kMsSsim);
  EXPECT_EQ(rd_metric_name(RdMetric::kMsSsim), "msssim");
  EXPECT_THROW(parse_rd_metric("psnr"), std::invalid_argument);
}

}  // namespace
}  // namespace modnic
