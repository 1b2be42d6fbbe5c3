#include "modnic/density.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace modnic {

namespace {

constexpr int kMaxStages = 8;

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

struct Trace {
  // h[k] is the input of stage k; z[k] its pre-gate affine output.
  std::array<std::array<double, MonotoneCdfNetwork::kMaxWidth>, kMaxStages> h;
  std::array<std::array<double, MonotoneCdfNetwork::kMaxWidth>, kMaxStages> z;
};

// Reparametrized weights for one pass over a batch of evaluations.
class LogitEvaluator {
 public:
  explicit LogitEvaluator(const MonotoneCdfNetwork& net) : net_(net) {
    const int stages = net.stages();
    weights_.resize(stages);
    dweights_.resize(stages);
    gates_.resize(stages);
    for (int k = 0; k < stages; ++k) {
      const auto raw = net.matrix(k).values();
      weights_[k].resize(raw.size());
      dweights_[k].resize(raw.size());
      for (size_t i = 0; i < raw.size(); ++i) {
        weights_[k][i] = softplus_scalar(raw[i]);
        dweights_[k][i] = sigmoid_scalar(raw[i]);
      }
      if (k < stages - 1) {
        const auto g = net.gate(k).values();
        gates_[k].resize(g.size());
        for (size_t i = 0; i < g.size(); ++i) gates_[k][i] = std::tanh(g[i]);
      }
    }
  }

  double forward(int c, double x, Trace* trace) const {
    const int stages = net_.stages();
    std::array<double, MonotoneCdfNetwork::kMaxWidth> h{};
    h[0] = x;
    for (int k = 0; k < stages; ++k) {
      const int in = net_.stage_in(k);
      const int out = net_.stage_out(k);
      const double* w = weights_[k].data() + static_cast<size_t>(c) * out * in;
      const double* b = net_.bias(k).values().data() + static_cast<size_t>(c) * out;
      if (trace) trace->h[k] = h;
      std::array<double, MonotoneCdfNetwork::kMaxWidth> z{};
      for (int j = 0; j < out; ++j) {
        double acc = b[j];
        for (int i = 0; i < in; ++i) acc += w[j * in + i] * h[i];
        z[j] = acc;
      }
      if (trace) trace->z[k] = z;
      if (k < stages - 1) {
        const double* a = gates_[k].data() + static_cast<size_t>(c) * out;
        for (int j = 0; j < out; ++j) h[j] = z[j] + a[j] * std::tanh(z[j]);
      } else {
        return z[0];
      }
    }
    return 0.0;  // unreachable: stages >= 1
  }

  // Accumulates g * d(logit)/d(params) into the network's parameter grads
  // and returns g * d(logit)/dx.
  double backward(int c, const Trace& trace, double g) const {
    const int stages = net_.stages();
    std::array<double, MonotoneCdfNetwork::kMaxWidth> gh{};
    gh[0] = g;
    for (int k = stages - 1; k >= 0; --k) {
      const int in = net_.stage_in(k);
      const int out = net_.stage_out(k);
      std::array<double, MonotoneCdfNetwork::kMaxWidth> gz{};
      if (k < stages - 1) {
        const size_t base = static_cast<size_t>(c) * out;
        const double* a = gates_[k].data() + base;
        const Tensor& gate = net_.gate(k);
        double* ggate =
            gate.requires_grad() ? gate.node().ensure_grad().data() + base : nullptr;
        for (int j = 0; j < out; ++j) {
          const double t = std::tanh(trace.z[k][j]);
          gz[j] = gh[j] * (1.0 + a[j] * (1.0 - t * t));
          if (ggate) ggate[j] += gh[j] * t * (1.0 - a[j] * a[j]);
        }
      } else {
        gz[0] = gh[0];
      }
      const Tensor& bias = net_.bias(k);
      if (bias.requires_grad()) {
        double* gb = bias.node().ensure_grad().data() + static_cast<size_t>(c) * out;
        for (int j = 0; j < out; ++j) gb[j] += gz[j];
      }
      const size_t wbase = static_cast<size_t>(c) * out * in;
      const double* w = weights_[k].data() + wbase;
      const double* dw = dweights_[k].data() + wbase;
      const Tensor& matrix = net_.matrix(k);
      double* gm = matrix.requires_grad()
                       ? matrix.node().ensure_grad().data() + wbase
                       : nullptr;
      std::array<double, MonotoneCdfNetwork::kMaxWidth> gin{};
      for (int j = 0; j < out; ++j) {
        for (int i = 0; i < in; ++i) {
          if (gm) gm[j * in + i] += gz[j] * trace.h[k][i] * dw[j * in + i];
          gin[i] += gz[j] * w[j * in + i];
        }
      }
      gh = gin;
    }
    return gh[0];
  }

 private:
  const MonotoneCdfNetwork& net_;
  std::vector<std::vector<double>> weights_;
  std::vector<std::vector<double>> dweights_;
  std::vector<std::vector<double>> gates_;
};

struct Interval {
  double p;       // c(v + 1/2) - c(v - 1/2)
  double dp_du;   // d p / d logit(v + 1/2)
  double dp_dl;   // d p / d logit(v - 1/2)
};

Interval interval_probability(double lower_logit, double upper_logit) {
  // Reflect into the lower tail so the subtraction does not cancel.
  const double s = lower_logit + upper_logit > 0.0 ? -1.0 : 1.0;
  const double su = sigmoid_scalar(s * upper_logit);
  const double sl = sigmoid_scalar(s * lower_logit);
  return {std::abs(su - sl), su * (1.0 - su), -sl * (1.0 - sl)};
}

// Mass of [v - 1/2, v + 1/2] under c(x) = (n(x) + 1 - n(-x)) / 2 where n is
// the raw network CDF: the mean of n's mass at v and at -v.
struct SymmetricMass {
  double p;
  Interval pos, neg;
};

SymmetricMass symmetric_mass(const LogitEvaluator& eval, int c, double v,
                             std::array<Trace, 4>* t = nullptr) {
  const Interval pos =
      interval_probability(eval.forward(c, v - 0.5, t ? &(*t)[0] : nullptr),
                           eval.forward(c, v + 0.5, t ? &(*t)[1] : nullptr));
  const Interval neg =
      interval_probability(eval.forward(c, -v - 0.5, t ? &(*t)[2] : nullptr),
                           eval.forward(c, -v + 0.5, t ? &(*t)[3] : nullptr));
  return {0.5 * (pos.p + neg.p), pos, neg};
}

}  // namespace

MonotoneCdfNetwork MonotoneCdfNetwork::create(const DensityConfig& config,
                                              Rng& rng) {
  if (config.channels < 1 || config.stages < 1 || config.stages > kMaxStages ||
      config.width < 1 || config.width > kMaxWidth) {
    throw std::invalid_argument("DensityConfig: unsupported geometry");
  }
  MonotoneCdfNetwork net;
  net.channels_ = config.channels;
  net.width_ = config.width;
  const int stages = config.stages;
  const double scale = std::pow(config.init_scale, 1.0 / stages);
  for (int k = 0; k < stages; ++k) {
    const int in = net.stage_in(k);
    const int out = k == stages - 1 ? 1 : config.width;
    // softplus(raw) = 1 / (scale * out)
    const double raw = std::log(std::expm1(1.0 / scale / out));
    net.matrices_.push_back(Tensor::full({config.channels, out, in}, raw));
    std::vector<double> b(static_cast<size_t>(config.channels) * out);
    for (double& v : b) v = rng.uniform(-0.5, 0.5);
    net.biases_.push_back(Tensor({config.channels, out}, std::move(b)));
    if (k < stages - 1) {
      net.gates_.push_back(Tensor({config.channels, out}));
    }
  }
  return net;
}

double MonotoneCdfNetwork::logit(int channel, double x) const {
  if (channel < 0 || channel >= channels_) {
    throw std::out_of_range("MonotoneCdfNetwork: channel out of range");
  }
  return LogitEvaluator(*this).forward(channel, x, nullptr);
}

double MonotoneCdfNetwork::cdf(int channel, double x) const {
  const LogitEvaluator eval(*this);
  if (channel < 0 || channel >= channels_) {
    throw std::out_of_range("MonotoneCdfNetwork: channel out of range");
  }
  // n(x) + 1 - n(-x) == sigmoid(l(x)) + sigmoid(-l(-x))
  return 0.5 * (sigmoid_scalar(eval.forward(channel, x, nullptr)) +
                sigmoid_scalar(-eval.forward(channel, -x, nullptr)));
}

double MonotoneCdfNetwork::pmf(int channel, double v) const {
  if (channel < 0 || channel >= channels_) {
    throw std::out_of_range("MonotoneCdfNetwork: channel out of range");
  }
  return symmetric_mass(LogitEvaluator(*this), channel, v).p;
}

std::vector<std::pair<std::string, Tensor>>
MonotoneCdfNetwork::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (int k = 0; k < stages(); ++k) {
    const std::string p = "density." + std::to_string(k);
    out.emplace_back(p + ".matrix", matrices_[k]);
    out.emplace_back(p + ".bias", biases_[k]);
    if (k < stages() - 1) out.emplace_back(p + ".gate", gates_[k]);
  }
  return out;
}

void MonotoneCdfNetwork::set_requires_grad(bool on) {
  for (auto& [name, t] : named_parameters()) t.set_requires_grad(on);
}

Tensor rate_bits(const MonotoneCdfNetwork& density, const Tensor& y_tilde) {
  if (y_tilde.rank() != 4 || y_tilde.dim(1) != density.channels()) {
    throw std::invalid_argument("rate_bits: expected [B," +
                                std::to_string(density.channels()) +
                                ",H,W], got " + shape_string(y_tilde.shape()));
  }
  const int channels = y_tilde.dim(1);
  const size_t plane = static_cast<size_t>(y_tilde.dim(2)) * y_tilde.dim(3);
  const auto yv = y_tilde.values();
  const LogitEvaluator eval(density);
  double total = 0.0;
  for (size_t i = 0; i < yv.size(); ++i) {
    const int c = static_cast<int>((i / plane) % channels);
    total -= std::log2(std::max(symmetric_mass(eval, c, yv[i]).p, kProbabilityFloor));
  }

  std::vector<Tensor> parents{y_tilde};
  for (auto& [name, t] : density.named_parameters()) parents.push_back(t);
  const MonotoneCdfNetwork* net = &density;
  return Tensor::from_op(
      {1}, {total}, std::move(parents),
      [net, channels, plane](detail::Node& self) {
        const double g = self.grad[0];
        auto& yn = self.parents[0];
        double* gy = yn->requires_grad ? yn->ensure_grad().data() : nullptr;
        const LogitEvaluator eval(*net);
        std::array<Trace, 4> t;
        for (size_t i = 0; i < yn->data.size(); ++i) {
          const int c = static_cast<int>((i / plane) % channels);
          const SymmetricMass m = symmetric_mass(eval, c, yn->data[i], &t);
          if (m.p <= kProbabilityFloor) continue;
          const double gp = -0.5 * g / (m.p * std::numbers::ln2);
          const double dx = eval.backward(c, t[1], gp * m.pos.dp_du) +
                            eval.backward(c, t[0], gp * m.pos.dp_dl) -
                            eval.backward(c, t[3], gp * m.neg.dp_du) -
                            eval.backward(c, t[2], gp * m.neg.dp_dl);
          if (gy) gy[i] += dx;
        }
      });
}

double estimate_bits(const MonotoneCdfNetwork& density, const LatentCode& code) {
  if (code.channels != density.channels()) {
    throw std::invalid_argument("estimate_bits: channel count mismatch");
  }
  const LogitEvaluator eval(density);
  const size_t plane = static_cast<size_t>(code.height) * code.width;
  double total = 0.0;
  for (size_t i = 0; i < code.symbols.size(); ++i) {
    const int c = static_cast<int>(i / plane);
    total -= std::log2(std::max(symmetric_mass(eval, c, code.symbols[i]).p,
                                kProbabilityFloor));
  }
  return total;
}

QuantizedCdfTable quantize_pmf(std::span<const double> pmf, int min_symbol,
                               int precision) {
  if (precision < 1 || precision > 16) {
    throw std::invalid_argument("quantize_pmf: precision must be in [1,16]");
  }
  const uint32_t total = 1u << precision;
  const size_t n = pmf.size();
  if (n == 0 || n > total) {
    throw std::invalid_argument("quantize_pmf: alphabet size " +
                                std::to_string(n) + " does not fit 2^" +
                                std::to_string(precision));
  }
  double mass = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("quantize_pmf: probabilities must be finite and >= 0");
    }
    mass += p;
  }

  std::vector<uint32_t> freq(n);
  int64_t assigned = 0;
  for (size_t i = 0; i < n; ++i) {
    const double share = mass > 0.0 ? pmf[i] / mass : 1.0 / static_cast<double>(n);
    const auto f = static_cast<int64_t>(std::llround(share * total));
    freq[i] = static_cast<uint32_t>(std::max<int64_t>(1, f));
    assigned += freq[i];
  }

  // Settle the rounding residue on the most probable symbols first.
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return pmf[a] > pmf[b]; });
  int64_t diff = static_cast<int64_t>(total) - assigned;
  while (diff != 0) {
    bool progressed = false;
    for (size_t idx : order) {
      if (diff == 0) break;
      if (diff > 0) {
        ++freq[idx];
        --diff;
        progressed = true;
      } else if (freq[idx] > 1) {
        --freq[idx];
        ++diff;
        progressed = true;
      }
    }
    if (!progressed) {
      throw std::logic_error("quantize_pmf: cannot normalize frequencies");
    }
  }

  QuantizedCdfTable table;
  table.min_symbol = min_symbol;
  table.precision = precision;
  table.cdf.resize(n + 1);
  table.cdf[0] = 0;
  for (size_t i = 0; i < n; ++i) table.cdf[i + 1] = table.cdf[i] + freq[i];
  return table;
}

std::vector<QuantizedCdfTable> build_tables(const MonotoneCdfNetwork& density,
                                            int support, int precision) {
  if (precision < 12 || precision > 16) {
    throw std::invalid_argument("build_tables: precision must be in [12,16]");
  }
  if (support < 0) throw std::invalid_argument("build_tables: negative support");
  const LogitEvaluator eval(density);
  std::vector<QuantizedCdfTable> tables;
  tables.reserve(density.channels());
  std::vector<double> raw(2 * support + 1), pmf(2 * support + 1);
  for (int c = 0; c < density.channels(); ++c) {
    double lower = eval.forward(c, -support - 0.5, nullptr);
    for (int v = -support; v <= support; ++v) {
      const double upper = eval.forward(c, v + 0.5, nullptr);
      raw[v + support] = interval_probability(lower, upper).p;
      lower = upper;
    }
    for (int i = 0; i < 2 * support + 1; ++i) {
      pmf[i] = 0.5 * (raw[i] + raw[2 * support - i]);
    }
    tables.push_back(quantize_pmf(pmf, -support, precision));
  }
  return tables;
}

}  // namespace modnic
