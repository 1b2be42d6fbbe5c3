// Analysis/synthesis transforms and the two latent quantizers.

#ifndef MODNIC_TRANSFORMS_H_
#define MODNIC_TRANSFORMS_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "modnic/rng.h"
#include "modnic/tensor.h"

namespace modnic {

// Largest latent magnitude the range coder accepts.
inline constexpr int kDefaultSupport = 64;

struct TransformConfig {
  int latent_channels = 32;
  int hidden_channels = 32;
};

struct ConvLayer {
  Tensor kernel;
  Tensor bias;
  int stride = 2;
  int pad = 0;
  int output_padding = 0;  // synthesis only
  bool relu = false;
};

// g_a is four stride-2 convolutions (k = 5,3,3,3) taking 3 channels to N;
// g_s mirrors it with transposed convolutions in reverse order.
struct TransformParams {
  std::vector<ConvLayer> analysis;
  std::vector<ConvLayer> synthesis;

  static TransformParams create(const TransformConfig& config, Rng& rng);
  // All kernels and biases zero; used by the degenerate-case tests.
  static TransformParams zeros(const TransformConfig& config);

  int latent_channels() const;
  int downsampling_factor() const;

  // Named parameter tensors in a fixed order (checkpoint layout).
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  void set_requires_grad(bool on);
};

// Shifts the last analysis bias so that every latent channel has zero mean
// over `images`.
void center_latents(TransformParams& params, std::span<const Tensor> images);

// x [B,3,H,W] in [0,1] -> y [B,N,H/16,W/16].
Tensor analyze(const TransformParams& params, const Tensor& x);

// y_hat [B,N,Hf,Wf] -> x_hat [B,3,16Hf,16Wf], unclamped.
Tensor synthesize(const TransformParams& params, const Tensor& y_hat);

// Clamps every value of an image tensor into [0,1] (evaluation only).
Tensor clamp_unit(const Tensor& x);

// y + u with u ~ U(-0.5, 0.5) i.i.d.; the noise is a constant for backward.
Tensor quantize_train(const Tensor& y, Rng& rng);

// Integer latents, channel-major then row-major, for a single image.
struct LatentCode {
  int channels = 0;
  int height = 0;  // latent rows
  int width = 0;   // latent columns
  int image_height = 0;
  int image_width = 0;
  std::vector<int32_t> symbols;

  size_t size() const { return symbols.size(); }
  friend bool operator==(const LatentCode&, const LatentCode&) = default;
};

struct QuantizeStats {
  size_t clamp_events = 0;
};

// Round half away from zero, then clamp into [-support, support]. y must be
// [1,N,Hf,Wf]. Clamped elements are counted in stats (and logged).
LatentCode quantize_infer(const Tensor& y, int support = kDefaultSupport,
                          QuantizeStats* stats = nullptr);

// Scalar version of the quantizer rule.
int32_t quantize_value(double v, int support, bool* clamped = nullptr);

// Latent code back to a [1,N,Hf,Wf] tensor.
Tensor dequantize(const LatentCode& code);

}  // namespace modnic

#endif  // MODNIC_TRANSFORMS_H_
