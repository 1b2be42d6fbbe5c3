#include "modnic/modnet.h"

#include <cmath>
#include <stdexcept>

namespace modnic {

namespace {

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

BinaryModulatorParams BinaryModulatorParams::create(int width, Rng& rng) {
  BinaryModulatorParams p;
  p.w1 = gaussian({width, 1}, 1.0, rng);
  p.b1 = gaussian({width}, 0.1, rng);
  p.w2 = gaussian({width, width}, std::sqrt(2.0 / width), rng);
  p.b2 = Tensor({width});
  p.w3 = gaussian({width, width}, std::sqrt(1.0 / width), rng);
  // Start with bm close to 1 so the cascade initially passes features.
  p.b3 = Tensor::full({width}, -2.0);
  return p;
}

BinaryModulatorParams BinaryModulatorParams::zeros(int width) {
  BinaryModulatorParams p;
  p.w1 = Tensor({width, 1});
  p.b1 = Tensor({width});
  p.w2 = Tensor({width, width});
  p.b2 = Tensor({width});
  p.w3 = Tensor({width, width});
  p.b3 = Tensor({width});
  return p;
}

ModNetParams ModNetParams::create(const ModNetConfig& config, Rng& rng) {
  if (config.latent_channels < 1 || config.width < 1) {
    throw std::invalid_argument("ModNetConfig: channel counts must be >= 1");
  }
  if (!(config.lambda_max > 1.0)) {
    throw std::invalid_argument("ModNetConfig: lambda_max must exceed 1");
  }
  ModNetParams p;
  p.config = config;
  const int n = config.latent_channels;
  const int m = config.width;
  for (int i = 0; i < kModNetConvs; ++i) {
    const int in = i == 0 ? n : m;
    const int out = i == kModNetConvs - 1 ? n : m;
    p.conv_kernels.push_back(gaussian({out, in, 1, 1}, std::sqrt(1.0 / in), rng));
    p.conv_biases.push_back(Tensor({out}));
  }
  for (double& b : p.conv_biases.back().mutable_values()) b = config.final_bias;
  for (int i = 0; i < kModNetModulators; ++i) {
    p.modulators.push_back(BinaryModulatorParams::create(m, rng));
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModNetParams::named_parameters()
    const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < conv_kernels.size(); ++i) {
    out.emplace_back("modnet.conv." + std::to_string(i) + ".kernel",
                     conv_kernels[i]);
    out.emplace_back("modnet.conv." + std::to_string(i) + ".bias",
                     conv_biases[i]);
  }
  for (size_t i = 0; i < modulators.size(); ++i) {
    const std::string p = "modnet.bm." + std::to_string(i) + ".";
    const auto& m = modulators[i];
    out.emplace_back(p + "w1", m.w1);
    out.emplace_back(p + "b1", m.b1);
    out.emplace_back(p + "w2", m.w2);
    out.emplace_back(p + "b2", m.b2);
    out.emplace_back(p + "w3", m.w3);
    out.emplace_back(p + "b3", m.b3);
  }
  return out;
}

void ModNetParams::set_requires_grad(bool on) {
  for (auto& [name, t] : named_parameters()) t.set_requires_grad(on);
}

double scale_lambda(double lambda, double lambda_max) {
  return std::log(lambda) / std::log(lambda_max);
}

Tensor bm_forward(const BinaryModulatorParams& params,
                  const Tensor& lambda_scaled) {
  Tensor f1 = relu(dense(lambda_scaled, params.w1, params.b1));
  Tensor f2 = relu(dense(f1, params.w2, params.b2));
  // 1 - sigmoid(z) == sigmoid(-z)
  return sigmoid(neg(dense(f2, params.w3, params.b3)));
}

Tensor modnet_forward(const ModNetParams& params, const Tensor& y,
                      std::span<const double> lambdas) {
  if (y.rank() != 4 || y.dim(1) != params.config.latent_channels) {
    throw std::invalid_argument("modnet_forward: expected [B," +
                                std::to_string(params.config.latent_channels) +
                                ",Hf,Wf], got " + shape_string(y.shape()));
  }
  const int batch = y.dim(0);
  if (lambdas.size() != 1 && static_cast<int>(lambdas.size()) != batch) {
    throw std::invalid_argument("modnet_forward: need 1 or " +
                                std::to_string(batch) + " lambda values");
  }
  std::vector<double> scaled(batch);
  for (int b = 0; b < batch; ++b) {
    const double lambda = lambdas[lambdas.size() == 1 ? 0 : b];
    if (!(lambda >= 1.0 && lambda <= params.config.lambda_max)) {
      throw std::invalid_argument(
          "modnet_forward: lambda " + std::to_string(lambda) +
          " outside [1, " + std::to_string(params.config.lambda_max) + "]");
    }
    scaled[b] = scale_lambda(lambda, params.config.lambda_max);
  }
  const Tensor lam({batch, 1}, std::move(scaled));
  const int h = y.dim(2);
  const int w = y.dim(3);

  Tensor feature = conv2d(y, params.conv_kernels[0], params.conv_biases[0], 1, 0);
  for (int k = 0; k < kModNetModulators; ++k) {
    const Tensor gate =
        broadcast_spatial(bm_forward(params.modulators[k], lam), h, w);
    feature = conv2d(mul(feature, gate), params.conv_kernels[k + 1],
                     params.conv_biases[k + 1], 1, 0);
  }
  return sigmoid(feature);
}

Tensor modnet_forward(const ModNetParams& params, const Tensor& y,
                      double lambda) {
  return modnet_forward(params, y, std::span<const double>(&lambda, 1));
}

Tensor apply_mask(const Tensor& y, const Tensor& mask, MaskMode mode) {
  if (y.shape() != mask.shape()) {
    throw std::invalid_argument("apply_mask: shape mismatch " +
                                shape_string(y.shape()) + " vs " +
                                shape_string(mask.shape()));
  }
  if (mode == MaskMode::kSoft) return mul(y, mask);
  std::vector<double> ind(mask.numel());
  const auto mv = mask.values();
  for (size_t i = 0; i < ind.size(); ++i) ind[i] = mv[i] >= 0.5 ? 1.0 : 0.0;
  return mul(y, Tensor(mask.shape(), std::move(ind)));
}

}  // namespace modnic
