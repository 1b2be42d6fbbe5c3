// Lambda-domain rate-distortion laws:
//   lambda = alpha * (exp(beta * R) - 1)
//   D      = ln(1 + alpha / lambda) / (alpha * beta)
// which together satisfy lambda = -dR/dD. Distortion is on the [0,1] pixel
// scale, so fitted coefficients are scale dependent.

#ifndef MODNIC_RD_MODEL_H_
#define MODNIC_RD_MODEL_H_

#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace modnic {

enum class RdMetric { kMse, kMsSsim };
enum class RdForm { kDOfLambda, kLambdaOfR };

RdMetric parse_rd_metric(std::string_view name);
std::string_view rd_metric_name(RdMetric metric);

struct RdSample {
  double lambda = 0.0;
  double bpp = 0.0;
  double distortion = 0.0;  // MSE or 1 - MS-SSIM
  RdMetric metric = RdMetric::kMse;
};

struct RdModelParams {
  double alpha = 0.0;
  double beta = 0.0;
  RdMetric metric = RdMetric::kMse;
  RdForm form = RdForm::kDOfLambda;
  double residual = 0.0;  // sum of squared residuals
  double r_squared = 0.0;
  int converged_starts = 0;
};

// Published coefficients for 0-255 MSE and 1 - MS-SSIM.
RdModelParams preset_params(RdMetric metric);

double lambda_of_rate(double rate, double alpha, double beta);
double rate_of_lambda(double lambda, double alpha, double beta);
double distortion_of_lambda(double lambda, double alpha, double beta);

// Max relative deviation of the finite-difference slope -dR/dD from lambda
// over the grid. relative_step <= 0 picks a step per point.
double consistency_check(double alpha, double beta, std::span<const double> lambdas,
                         double relative_step = 0.0);

class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, RdModelParams best)
      : std::runtime_error(what), best_(best) {}
  const RdModelParams& best() const { return best_; }

 private:
  RdModelParams best_;
};

// Damped Gauss-Newton from 16 log-spaced starts. kDOfLambda fits
// (lambda, distortion); kLambdaOfR fits (lambda, bpp) with residuals in
// rate. Requires at least 3 samples with distinct lambdas.
RdModelParams fit_rd(std::span<const RdSample> samples, RdForm form);

class RateRangeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RateControlResult {
  double lambda = 0.0;
  double achieved_bpp = 0.0;
  double bre = 0.0;
  double min_bpp = 0.0;
  double max_bpp = 0.0;
  // Every (lambda, bpp) encode performed, range probes first.
  std::vector<std::pair<double, double>> trace;
};

// bpp_at(lambda) encodes and returns the achieved bpp. The achievable range
// is probed at lambda_min and lambda_max; refine > 0 adds up to `refine`
// bracketed re-encodes in log-lambda.
RateControlResult rate_control(double target_bpp,
                               const std::function<double(double)>& bpp_at,
                               const RdModelParams& params, int refine,
                               double lambda_min = 1.0, double lambda_max = 256.0);

// Bjontegaard delta rate of B relative to A in percent. Points are
// (rate, quality); at least 4 per curve with overlapping quality.
double bd_rate(std::span<const std::pair<double, double>> curve_a,
               std::span<const std::pair<double, double>> curve_b);

void write_rd_samples(const std::filesystem::path& path, std::span<const RdSample> samples);
std::vector<RdSample> read_rd_samples(const std::filesystem::path& path);
std::vector<RdSample> parse_rd_samples(const std::string& text);
std::string format_rd_samples(std::span<const RdSample> samples);

}  // namespace modnic

#endif  // MODNIC_RD_MODEL_H_
