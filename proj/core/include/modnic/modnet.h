// Lambda-conditioned modulation network.
//
// Eight 1x1 convolutions (N->M, six M->M, M->N) separated by seven binary
// modulators. Each modulator is a 3-layer fully connected net mapping the
// scaled lambda to an M-vector in (0,1) that is broadcast over the latent
// plane and multiplied into the features. A final sigmoid produces the mask.

#ifndef MODNIC_MODNET_H_
#define MODNIC_MODNET_H_

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "modnic/rng.h"
#include "modnic/tensor.h"

namespace modnic {

inline constexpr double kLambdaMax = 256.0;
inline constexpr int kModNetConvs = 8;
inline constexpr int kModNetModulators = 7;

struct ModNetConfig {
  int latent_channels = 32;  // N
  int width = 32;            // M
  double lambda_max = kLambdaMax;
  // Initial bias of the last conv; sigmoid(bias) is the starting mask level.
  double final_bias = 3.0;
};

struct BinaryModulatorParams {
  Tensor w1, b1;  // [M,1], [M]
  Tensor w2, b2;  // [M,M], [M]
  Tensor w3, b3;  // [M,M], [M]

  static BinaryModulatorParams create(int width, Rng& rng);
  static BinaryModulatorParams zeros(int width);
};

struct ModNetParams {
  ModNetConfig config;
  std::vector<Tensor> conv_kernels;  // [out,in,1,1]
  std::vector<Tensor> conv_biases;
  std::vector<BinaryModulatorParams> modulators;

  static ModNetParams create(const ModNetConfig& config, Rng& rng);

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  void set_requires_grad(bool on);
};

// ln(lambda) / ln(lambda_max).
double scale_lambda(double lambda, double lambda_max = kLambdaMax);

// lambda_scaled [B,1] -> bm [B,M] with entries in (0,1).
Tensor bm_forward(const BinaryModulatorParams& params,
                  const Tensor& lambda_scaled);

// Mask for y [B,N,Hf,Wf]; lambdas holds one value per batch item (or a
// single value shared by all). Each lambda must lie in [1, lambda_max].
Tensor modnet_forward(const ModNetParams& params, const Tensor& y,
                      std::span<const double> lambdas);
Tensor modnet_forward(const ModNetParams& params, const Tensor& y,
                      double lambda);

enum class MaskMode { kSoft, kHard };

// soft: y * mask. hard: y * [mask >= 0.5] (the indicator is a constant).
Tensor apply_mask(const Tensor& y, const Tensor& mask, MaskMode mode);

}  // namespace modnic

#endif  // MODNIC_MODNET_H_
