#include "modnic/transforms.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace modnic {

namespace {

struct LayerSpec {
  int kernel;
  int pad;
};

// Analysis geometry; synthesis walks it backwards.
constexpr LayerSpec kLayers[] = {{5, 2}, {3, 1}, {3, 1}, {3, 1}};
constexpr int kNumLayers = 4;

Tensor random_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

std::pair<int, int> layer_channels(const TransformConfig& c, int i) {
  const int in = i == 0 ? 3 : c.hidden_channels;
  const int out = i == kNumLayers - 1 ? c.latent_channels : c.hidden_channels;
  return {in, out};
}

TransformParams build(const TransformConfig& config, Rng* rng) {
  if (config.latent_channels < 1 || config.hidden_channels < 1) {
    throw std::invalid_argument("TransformConfig: channel counts must be >= 1");
  }
  TransformParams p;
  for (int i = 0; i < kNumLayers; ++i) {
    const auto [cin, cout] = layer_channels(config, i);
    const int k = kLayers[i].kernel;
    ConvLayer layer;
    layer.stride = 2;
    layer.pad = kLayers[i].pad;
    layer.relu = i != kNumLayers - 1;
    if (rng) {
      layer.kernel = random_tensor({cout, cin, k, k},
                                   std::sqrt(2.0 / (cin * k * k)), *rng);
    } else {
      layer.kernel = Tensor({cout, cin, k, k});
    }
    layer.bias = Tensor({cout});
    if (rng && i == 0) {
      // Centres the [0,1] input: conv(x) + b == conv(x - 1/2) at init.
      const auto w = layer.kernel.values();
      auto b = layer.bias.mutable_values();
      const size_t per_out = static_cast<size_t>(cin) * k * k;
      for (int o = 0; o < cout; ++o) {
        double s = 0.0;
        for (size_t j = 0; j < per_out; ++j) s += w[o * per_out + j];
        b[o] = -0.5 * s;
      }
    }
    p.analysis.push_back(std::move(layer));
  }
  for (int i = kNumLayers - 1; i >= 0; --i) {
    // Transposed kernel [in, out, k, k] mirrors analysis layer i.
    const auto [a_in, a_out] = layer_channels(config, i);
    const int cin = a_out;
    const int cout = a_in;
    const int k = kLayers[i].kernel;
    ConvLayer layer;
    layer.stride = 2;
    layer.pad = kLayers[i].pad;
    layer.output_padding = 1;
    layer.relu = i != 0;
    if (rng) {
      layer.kernel = random_tensor({cin, cout, k, k},
                                   std::sqrt(2.0 * 4.0 / (cin * k * k)), *rng);
    } else {
      layer.kernel = Tensor({cin, cout, k, k});
    }
    layer.bias = Tensor({cout});
    if (rng && i == 0) {
      for (double& b : layer.bias.mutable_values()) b = 0.5;
    }
    p.synthesis.push_back(std::move(layer));
  }
  return p;
}

Tensor run_layers(const std::vector<ConvLayer>& layers, Tensor h,
                  bool transposed) {
  for (const auto& layer : layers) {
    h = transposed ? conv_transpose2d(h, layer.kernel, layer.bias, layer.stride,
                                      layer.pad, layer.output_padding)
                   : conv2d(h, layer.kernel, layer.bias, layer.stride,
                            layer.pad);
    if (layer.relu) h = relu(h);
  }
  return h;
}

}  // namespace

TransformParams TransformParams::create(const TransformConfig& config,
                                        Rng& rng) {
  return build(config, &rng);
}

TransformParams TransformParams::zeros(const TransformConfig& config) {
  return build(config, nullptr);
}

int TransformParams::latent_channels() const {
  return analysis.back().kernel.dim(0);
}

int TransformParams::downsampling_factor() const {
  int f = 1;
  for (const auto& layer : analysis) f *= layer.stride;
  return f;
}

std::vector<std::pair<std::string, Tensor>> TransformParams::named_parameters()
    const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < analysis.size(); ++i) {
    out.emplace_back("ga." + std::to_string(i) + ".kernel", analysis[i].kernel);
    out.emplace_back("ga." + std::to_string(i) + ".bias", analysis[i].bias);
  }
  for (size_t i = 0; i < synthesis.size(); ++i) {
    out.emplace_back("gs." + std::to_string(i) + ".kernel",
                     synthesis[i].kernel);
    out.emplace_back("gs." + std::to_string(i) + ".bias", synthesis[i].bias);
  }
  return out;
}

void TransformParams::set_requires_grad(bool on) {
  for (auto& [name, t] : named_parameters()) t.set_requires_grad(on);
}

Tensor analyze(const TransformParams& params, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw std::invalid_argument("analyze: expected [B,3,H,W], got " +
                                shape_string(x.shape()));
  }
  const int f = params.downsampling_factor();
  if (x.dim(2) % f != 0 || x.dim(3) % f != 0) {
    throw std::invalid_argument("analyze: image " + std::to_string(x.dim(2)) +
                                "x" + std::to_string(x.dim(3)) +
                                " is not divisible by " + std::to_string(f));
  }
  return run_layers(params.analysis, x, false);
}

Tensor synthesize(const TransformParams& params, const Tensor& y_hat) {
  if (y_hat.rank() != 4 || y_hat.dim(1) != params.latent_channels()) {
    throw std::invalid_argument(
        "synthesize: expected [B," + std::to_string(params.latent_channels()) +
        ",Hf,Wf], got " + shape_string(y_hat.shape()));
  }
  return run_layers(params.synthesis, y_hat, true);
}

void center_latents(TransformParams& params, std::span<const Tensor> images) {
  if (images.empty()) return;
  NoGradGuard guard;
  const int n = params.latent_channels();
  std::vector<double> sums(n, 0.0);
  size_t count = 0;
  for (const auto& x : images) {
    const Tensor y = analyze(params, x);
    const auto v = y.values();
    const size_t plane = static_cast<size_t>(y.dim(2)) * y.dim(3);
    for (size_t i = 0; i < v.size(); ++i) sums[(i / plane) % n] += v[i];
    count += static_cast<size_t>(y.dim(0)) * plane;
  }
  auto bias = params.analysis.back().bias.mutable_values();
  for (int c = 0; c < n; ++c) bias[c] -= sums[c] / static_cast<double>(count);
}

Tensor clamp_unit(const Tensor& x) {
  std::vector<double> v(x.values().begin(), x.values().end());
  for (double& e : v) e = std::clamp(e, 0.0, 1.0);
  return Tensor(x.shape(), std::move(v));
}

Tensor quantize_train(const Tensor& y, Rng& rng) {
  std::vector<double> out(y.values().begin(), y.values().end());
  for (double& v : out) v += rng.uniform() - 0.5;
  return Tensor::from_op(y.shape(), std::move(out), {y},
                         [](detail::Node& self) {
                           auto& p = self.parents[0];
                           if (!p->requires_grad) return;
                           auto& g = p->ensure_grad();
                           for (size_t i = 0; i < g.size(); ++i) {
                             g[i] += self.grad[i];
                           }
                         });
}

int32_t quantize_value(double v, int support, bool* clamped) {
  const double r = std::round(v);  // half away from zero
  const double c = std::clamp(r, static_cast<double>(-support),
                              static_cast<double>(support));
  if (clamped) *clamped = c != r;
  return static_cast<int32_t>(c);
}

LatentCode quantize_infer(const Tensor& y, int support, QuantizeStats* stats) {
  if (y.rank() != 4 || y.dim(0) != 1) {
    throw std::invalid_argument("quantize_infer: expected [1,N,Hf,Wf], got " +
                                shape_string(y.shape()));
  }
  LatentCode code;
  code.channels = y.dim(1);
  code.height = y.dim(2);
  code.width = y.dim(3);
  code.symbols.reserve(y.numel());
  size_t clamps = 0;
  for (double v : y.values()) {
    bool clamped = false;
    code.symbols.push_back(quantize_value(v, support, &clamped));
    clamps += clamped;
  }
  if (clamps > 0) {
    spdlog::warn("quantize_infer: clamped {} latent value(s) into [-{}, {}]",
                 clamps, support, support);
  }
  if (stats) stats->clamp_events += clamps;
  return code;
}

Tensor dequantize(const LatentCode& code) {
  std::vector<double> v(code.symbols.begin(), code.symbols.end());
  return Tensor({1, code.channels, code.height, code.width}, std::move(v));
}

}  // namespace modnic
