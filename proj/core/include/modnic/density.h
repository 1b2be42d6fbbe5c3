// Factorized entropy model: one monotone cumulative network per latent
// channel, the differentiable bit estimate built on it, and the integer
// frequency tables the range coder consumes.

#ifndef MODNIC_DENSITY_H_
#define MODNIC_DENSITY_H_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "modnic/rng.h"
#include "modnic/tensor.h"
#include "modnic/transforms.h"

namespace modnic {

// Floor applied to interval probabilities inside the bit estimate.
inline constexpr double kProbabilityFloor = 1.0 / 32768.0;
inline constexpr int kDefaultPrecision = 16;

struct DensityConfig {
  int channels = 32;
  int stages = 4;
  int width = 3;  // hidden width of every stage, at most kMaxWidth
  double init_scale = 10.0;
};

// n(x) = sigmoid(f_K(...f_1(x))), with f_k(h) = H_k h + b_k followed, for
// k < K, by h + tanh(a_k) * tanh(h). H_k = softplus(raw) keeps every weight
// positive, so n is nondecreasing in x and confined to (0, 1). The model CDF
// is the symmetrized c(x) = (n(x) + 1 - n(-x)) / 2, which keeps every
// channel's median at zero.
class MonotoneCdfNetwork {
 public:
  static constexpr int kMaxWidth = 16;

  static MonotoneCdfNetwork create(const DensityConfig& config, Rng& rng);

  int channels() const { return channels_; }
  int stages() const { return static_cast<int>(matrices_.size()); }
  int width() const { return width_; }

  // Stage k tensors: matrix [C, out_k, in_k] (raw, pre-softplus),
  // bias [C, out_k], gate [C, out_k] (raw, pre-tanh; stages < K-1 only).
  Tensor& matrix(int k) { return matrices_[k]; }
  Tensor& bias(int k) { return biases_[k]; }
  Tensor& gate(int k) { return gates_[k]; }
  const Tensor& matrix(int k) const { return matrices_[k]; }
  const Tensor& bias(int k) const { return biases_[k]; }
  const Tensor& gate(int k) const { return gates_[k]; }
  int stage_in(int k) const { return k == 0 ? 1 : width_; }
  int stage_out(int k) const { return k == stages() - 1 ? 1 : width_; }

  // Logit of the raw network n.
  double logit(int channel, double x) const;
  double cdf(int channel, double x) const;
  // c(v + 1/2) - c(v - 1/2), evaluated without cancellation in the tails.
  double pmf(int channel, double v) const;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  void set_requires_grad(bool on);

 private:
  int channels_ = 0;
  int width_ = 0;
  std::vector<Tensor> matrices_;
  std::vector<Tensor> biases_;
  std::vector<Tensor> gates_;
};

// Sum over elements of -log2 max(P[y - 1/2 < Y < y + 1/2], floor) for
// y_tilde [B,C,H,W]. Differentiable in y_tilde and in the network params.
Tensor rate_bits(const MonotoneCdfNetwork& density, const Tensor& y_tilde);

// Same estimate on integer latents (no tape).
double estimate_bits(const MonotoneCdfNetwork& density, const LatentCode& code);

// Cumulative frequencies for symbols [min_symbol, min_symbol + n).
struct QuantizedCdfTable {
  int min_symbol = 0;
  int precision = kDefaultPrecision;
  std::vector<uint32_t> cdf;  // n + 1 entries, cdf[0] = 0, cdf[n] = 2^P

  int symbol_count() const { return static_cast<int>(cdf.size()) - 1; }
  int max_symbol() const { return min_symbol + symbol_count() - 1; }
  uint32_t frequency(int index) const { return cdf[index + 1] - cdf[index]; }
  double probability(int index) const {
    return static_cast<double>(frequency(index)) /
           static_cast<double>(1u << precision);
  }
  friend bool operator==(const QuantizedCdfTable&,
                         const QuantizedCdfTable&) = default;
};

// Frequencies proportional to pmf, each at least 1, summing to exactly 2^P.
QuantizedCdfTable quantize_pmf(std::span<const double> pmf, int min_symbol,
                               int precision = kDefaultPrecision);

// One table per channel over [-support, support].
std::vector<QuantizedCdfTable> build_tables(const MonotoneCdfNetwork& density,
                                            int support = kDefaultSupport,
                                            int precision = kDefaultPrecision);

}  // namespace modnic

#endif  // MODNIC_DENSITY_H_
