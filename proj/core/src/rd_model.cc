#include "modnic/rd_model.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <Eigen/Dense>

namespace modnic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw std::invalid_argument(std::string(what) + " must be positive and finite");
  }
}

struct Problem {
  std::vector<double> lambda;
  std::vector<double> target;
  RdForm form;
  double norm;  // residual scale; leaves the minimizer unchanged
};

// Residuals and Jacobian with respect to (ln alpha, ln beta).
double evaluate(const Problem& p, double u, double v, std::vector<double>& r,
                std::vector<std::array<double, 2>>* jac) {
  const double alpha = std::exp(u);
  const double beta = std::exp(v);
  double ss = 0.0;
  for (size_t i = 0; i < p.lambda.size(); ++i) {
    const double lam = p.lambda[i];
    double model, du;
    if (p.form == RdForm::kDOfLambda) {
      model = std::log1p(alpha / lam) / (alpha * beta);
      du = 1.0 / (beta * (lam + alpha)) - model;
    } else {
      model = std::log1p(lam / alpha) / beta;
      du = -lam / (beta * (alpha + lam));
    }
    r[i] = (model - p.target[i]) / p.norm;
    if (jac) (*jac)[i] = {du / p.norm, -model / p.norm};
    ss += r[i] * r[i];
  }
  return std::isfinite(ss) ? ss : kInf;
}

struct Solution {
  double u, v, ss;
};

Solution levenberg_marquardt(const Problem& p, double u, double v) {
  const size_t n = p.lambda.size();
  std::vector<double> r(n), r_try(n);
  std::vector<std::array<double, 2>> jac(n);
  double ss = evaluate(p, u, v, r, &jac);
  double mu = 1e-3;
  for (int iter = 0; iter < 500 && std::isfinite(ss); ++iter) {
    double a = 0, b = 0, c = 0, g0 = 0, g1 = 0;
    for (size_t i = 0; i < n; ++i) {
      a += jac[i][0] * jac[i][0];
      b += jac[i][0] * jac[i][1];
      c += jac[i][1] * jac[i][1];
      g0 += jac[i][0] * r[i];
      g1 += jac[i][1] * r[i];
    }
    bool improved = false;
    while (mu < 1e12) {
      const double a2 = a + mu * std::max(a, 1e-12);
      const double c2 = c + mu * std::max(c, 1e-12);
      const double det = a2 * c2 - b * b;
      if (!(std::abs(det) > 0.0)) {
        mu *= 10.0;
        continue;
      }
      const double du = std::clamp(-(c2 * g0 - b * g1) / det, -2.0, 2.0);
      const double dv = std::clamp(-(a2 * g1 - b * g0) / det, -2.0, 2.0);
      const double nu = std::clamp(u + du, -30.0, 30.0);
      const double nv = std::clamp(v + dv, -30.0, 30.0);
      const double ss_try = evaluate(p, nu, nv, r_try, nullptr);
      if (ss_try < ss) {
        const bool tiny = ss - ss_try <= 1e-15 * ss || (std::abs(du) + std::abs(dv)) < 1e-13;
        u = nu;
        v = nv;
        ss = evaluate(p, u, v, r, &jac);
        mu = std::max(mu * 0.3, 1e-12);
        improved = !tiny;
        break;
      }
      mu *= 10.0;
    }
    if (!improved) break;
  }
  return {u, v, ss};
}

std::vector<double> polyfit3(std::span<const std::pair<double, double>> curve) {
  // log(rate) as a cubic in quality.
  Eigen::MatrixXd a(curve.size(), 4);
  Eigen::VectorXd y(curve.size());
  for (size_t i = 0; i < curve.size(); ++i) {
    const double q = curve[i].second;
    a(i, 0) = 1.0;
    a(i, 1) = q;
    a(i, 2) = q * q;
    a(i, 3) = q * q * q;
    y(i) = std::log(curve[i].first);
  }
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(y);
  return {c(0), c(1), c(2), c(3)};
}

double poly_integral(const std::vector<double>& c, double lo, double hi) {
  auto prim = [&](double q) {
    return c[0] * q + c[1] * q * q / 2 + c[2] * q * q * q / 3 + c[3] * q * q * q * q / 4;
  };
  return prim(hi) - prim(lo);
}

void check_curve(std::span<const std::pair<double, double>> curve, const char* name) {
  if (curve.size() < 4) {
    throw std::invalid_argument(std::string("bd_rate: ") + name + " needs at least 4 points");
  }
  for (const auto& [rate, q] : curve) {
    if (!(rate > 0.0) || !std::isfinite(rate) || !std::isfinite(q)) {
      throw std::invalid_argument(std::string("bd_rate: ") + name +
                                  " has a non-positive or non-finite point");
    }
  }
}

}  // namespace

RdMetric parse_rd_metric(std::string_view name) {
  if (name == "mse") return RdMetric::kMse;
  if (name == "msssim") return RdMetric::kMsSsim;
  throw std::invalid_argument("unknown metric '" + std::string(name) + "' (mse|msssim)");
}

std::string_view rd_metric_name(RdMetric metric) {
  return metric == RdMetric::kMse ? "mse" : "msssim";
}

RdModelParams preset_params(RdMetric metric) {
  RdModelParams p;
  p.metric = metric;
  if (metric == RdMetric::kMse) {
    p.alpha = 39.301;
    p.beta = 1.296;
  } else {
    p.alpha = 89.072;
    p.beta = 1.225;
  }
  return p;
}

double lambda_of_rate(double rate, double alpha, double beta) {
  if (!(rate >= 0.0)) throw std::invalid_argument("lambda_of_rate: rate must be >= 0");
  require_positive(alpha, "alpha");
  require_positive(beta, "beta");
  return alpha * std::expm1(beta * rate);
}

double rate_of_lambda(double lambda, double alpha, double beta) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("rate_of_lambda: lambda must be >= 0");
  require_positive(alpha, "alpha");
  require_positive(beta, "beta");
  return std::log1p(lambda / alpha) / beta;
}

double distortion_of_lambda(double lambda, double alpha, double beta) {
  require_positive(lambda, "lambda");
  require_positive(alpha, "alpha");
  require_positive(beta, "beta");
  return std::log1p(alpha / lambda) / (alpha * beta);
}

double consistency_check(double alpha, double beta, std::span<const double> lambdas,
                         double relative_step) {
  double worst = 0.0;
  for (double lam : lambdas) {
    require_positive(lam, "lambda");
    const double s = relative_step > 0.0 ? relative_step : 1e-4;
    const double h = lam * s;
    const double dr = rate_of_lambda(lam + h, alpha, beta) - rate_of_lambda(lam - h, alpha, beta);
    const double dd = distortion_of_lambda(lam + h, alpha, beta) -
                      distortion_of_lambda(lam - h, alpha, beta);
    const double slope = -dr / dd;
    worst = std::max(worst, std::abs(slope - lam) / lam);
  }
  return worst;
}

RdModelParams fit_rd(std::span<const RdSample> samples, RdForm form) {
  if (samples.size() < 3) throw std::invalid_argument("fit_rd: need at least 3 samples");
  std::set<double> seen;
  Problem p;
  p.form = form;
  for (const auto& s : samples) {
    require_positive(s.lambda, "sample lambda");
    if (s.metric != samples[0].metric) throw std::invalid_argument("fit_rd: mixed metrics");
    if (!seen.insert(s.lambda).second) {
      throw std::invalid_argument("fit_rd: duplicate lambda " + std::to_string(s.lambda));
    }
    const double t = form == RdForm::kDOfLambda ? s.distortion : s.bpp;
    if (!std::isfinite(t)) throw std::invalid_argument("fit_rd: non-finite sample");
    p.lambda.push_back(s.lambda);
    p.target.push_back(t);
  }
  p.norm = 0.0;
  for (double t : p.target) p.norm = std::max(p.norm, std::abs(t));
  if (!(p.norm > 0.0)) p.norm = 1.0;

  Solution best{0.0, 0.0, kInf};
  int converged = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double u0 = std::log(1e-2) + i * (std::log(1e4) - std::log(1e-2)) / 3.0;
      const double v0 = std::log(1e-2) + j * (std::log(1e2) - std::log(1e-2)) / 3.0;
      const Solution s = levenberg_marquardt(p, u0, v0);
      if (!std::isfinite(s.ss)) continue;
      ++converged;
      if (s.ss < best.ss) best = s;
    }
  }
  RdModelParams out;
  out.form = form;
  out.metric = samples[0].metric;
  out.converged_starts = converged;
  if (!std::isfinite(best.ss)) {
    out.residual = kInf;
    throw FitError("fit_rd: every start diverged", out);
  }
  out.alpha = std::exp(best.u);
  out.beta = std::exp(best.v);
  out.residual = best.ss * p.norm * p.norm;
  double mean = 0.0;
  for (double t : p.target) mean += t;
  mean /= p.target.size();
  double total = 0.0;
  for (double t : p.target) total += (t - mean) * (t - mean);
  out.r_squared = total > 0.0 ? 1.0 - out.residual / total : 1.0;
  return out;
}

RateControlResult rate_control(double target_bpp,
                               const std::function<double(double)>& bpp_at,
                               const RdModelParams& params, int refine,
                               double lambda_min, double lambda_max) {
  require_positive(target_bpp, "target bpp");
  if (refine < 0) throw std::invalid_argument("rate_control: refine must be >= 0");
  if (!(lambda_min > 0.0 && lambda_min < lambda_max)) {
    throw std::invalid_argument("rate_control: bad lambda range");
  }
  RateControlResult r;
  r.min_bpp = bpp_at(lambda_min);
  r.max_bpp = bpp_at(lambda_max);
  r.trace = {{lambda_min, r.min_bpp}, {lambda_max, r.max_bpp}};
  if (target_bpp < r.min_bpp || target_bpp > r.max_bpp) {
    std::ostringstream os;
    os << "rate_control: target " << target_bpp << " bpp outside achievable range ["
       << r.min_bpp << ", " << r.max_bpp << "]";
    throw RateRangeError(os.str());
  }
  auto bre = [&](double bpp) { return std::abs(bpp - target_bpp) / target_bpp; };

  r.lambda = std::clamp(lambda_of_rate(target_bpp, params.alpha, params.beta), lambda_min,
                        lambda_max);
  r.achieved_bpp = bpp_at(r.lambda);
  r.bre = bre(r.achieved_bpp);
  r.trace.emplace_back(r.lambda, r.achieved_bpp);
  if (refine == 0) return r;

  // Bracket in log-lambda; monotone rate is assumed and checked.
  std::vector<std::pair<double, double>> pts = {
      {lambda_min, r.min_bpp}, {r.lambda, r.achieved_bpp}, {lambda_max, r.max_bpp}};
  std::sort(pts.begin(), pts.end());
  auto non_monotone = [](double l0, double b0, double l1, double b1) {
    std::ostringstream os;
    os << "rate_control: rate not monotone in lambda (" << l0 << " -> " << b0 << " bpp, "
       << l1 << " -> " << b1 << " bpp)";
    return std::runtime_error(os.str());
  };
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    if (pts[i + 1].second < pts[i].second) {
      throw non_monotone(pts[i].first, pts[i].second, pts[i + 1].first, pts[i + 1].second);
    }
  }
  auto lo = pts[0], hi = pts[2];
  if (target_bpp <= pts[1].second) hi = pts[1]; else lo = pts[1];

  for (int k = 0; k < refine && r.bre > 0.0; ++k) {
    const double la = std::log(lo.first), lb = std::log(hi.first);
    double t = 0.5;
    if (hi.second > lo.second) {
      t = std::clamp((target_bpp - lo.second) / (hi.second - lo.second), 0.1, 0.9);
    }
    const double lam = std::exp(la + t * (lb - la));
    const double bpp = bpp_at(lam);
    r.trace.emplace_back(lam, bpp);
    if (bpp < lo.second) throw non_monotone(lo.first, lo.second, lam, bpp);
    if (bpp > hi.second) throw non_monotone(lam, bpp, hi.first, hi.second);
    if (bre(bpp) < r.bre) {
      r.lambda = lam;
      r.achieved_bpp = bpp;
      r.bre = bre(bpp);
    }
    if (bpp < target_bpp) lo = {lam, bpp}; else hi = {lam, bpp};
  }
  return r;
}

double bd_rate(std::span<const std::pair<double, double>> curve_a,
               std::span<const std::pair<double, double>> curve_b) {
  check_curve(curve_a, "curve A");
  check_curve(curve_b, "curve B");
  auto range = [](std::span<const std::pair<double, double>> c) {
    double lo = kInf, hi = -kInf;
    for (const auto& pt : c) {
      lo = std::min(lo, pt.second);
      hi = std::max(hi, pt.second);
    }
    return std::pair{lo, hi};
  };
  const auto [a_lo, a_hi] = range(curve_a);
  const auto [b_lo, b_hi] = range(curve_b);
  const double lo = std::max(a_lo, b_lo);
  const double hi = std::min(a_hi, b_hi);
  if (!(hi > lo)) throw std::invalid_argument("bd_rate: quality ranges do not overlap");
  const auto pa = polyfit3(curve_a);
  const auto pb = polyfit3(curve_b);
  const double diff = (poly_integral(pb, lo, hi) - poly_integral(pa, lo, hi)) / (hi - lo);
  return std::expm1(diff) * 100.0;
}

std::string format_rd_samples(std::span<const RdSample> samples) {
  std::ostringstream os;
  os.precision(17);
  os << "lambda,bpp,distortion,metric\n";
  for (const auto& s : samples) {
    os << s.lambda << ',' << s.bpp << ',' << s.distortion << ',' << rd_metric_name(s.metric)
       << '\n';
  }
  return os.str();
}

std::vector<RdSample> parse_rd_samples(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("lambda,bpp,distortion,metric", 0) != 0) {
    throw std::invalid_argument("rd samples: expected header lambda,bpp,distortion,metric");
  }
  std::vector<RdSample> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    try {
      if (cells.size() != 4) throw std::invalid_argument("expected 4 fields");
      RdSample s{std::stod(cells[0]), std::stod(cells[1]), std::stod(cells[2]),
                 parse_rd_metric(cells[3])};
      if (!std::isfinite(s.lambda) || !std::isfinite(s.bpp) || !std::isfinite(s.distortion)) {
        throw std::invalid_argument("non-finite value");
      }
      out.push_back(s);
    } catch (const std::exception& e) {
      throw std::invalid_argument("rd samples line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_rd_samples(const std::filesystem::path& path, std::span<const RdSample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_rd_samples(samples);
}

std::vector<RdSample> read_rd_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_rd_samples(ss.str());
}

}  // namespace modnic
