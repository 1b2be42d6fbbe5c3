// Two-phase training: the base codec at the top rate, then ModNet alone on
// top of the frozen base with a distinct lambda per mini-batch sample.
//
// Loss scaling: for a batch of B images with H*W pixels each,
//   loss = (1/B) * sum_i [ lambda_i * distortion_scale * MSE_i + R_i ],
// where MSE_i is the per-image mean squared error on [0,1] pixels and
// R_i = bits_i / (H*W). The literal VBR form drops lambda_i.

#ifndef MODNIC_TRAINER_H_
#define MODNIC_TRAINER_H_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "modnic/model.h"
#include "modnic/rng.h"
#include "modnic/tensor.h"

namespace modnic {

enum class VbrLoss { kWeighted, kLiteral };
enum class LrSchedule { kConstant, kPaper };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  ModelConfig model;
  int batch_size = 8;
  int base_steps = 3000;
  int modnet_steps = 5000;
  double base_lr = 1e-3;
  double modnet_lr = 3e-3;
  LrSchedule schedule = LrSchedule::kConstant;
  double lambda_pretrain = kLambdaMax;
  int lambda_set_max = 256;  // S = {1, ..., lambda_set_max}
  double distortion_scale = 0.25;
  VbrLoss vbr_loss = VbrLoss::kWeighted;
  AdamConfig adam;
  uint64_t seed = 1;
  // Synthetic dataset used when no directory is given.
  int train_images = 256;
  int image_size = 32;
  uint64_t data_seed = 7;
  int log_every = 50;

  static TrainConfig toy();
  static TrainConfig paper();
  // Starts from the preset named by "preset" (default toy) and applies the
  // remaining keys. Unknown keys are rejected.
  static TrainConfig from_text(const std::string& text);
  std::string to_text() const;
  void validate() const;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);
  void step(double lr);
  void zero_grad();
  uint64_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  uint64_t t_ = 0;
};

struct LossTerms {
  Tensor loss;
  double distortion = 0.0;  // mean per-image MSE
  double rate_bpp = 0.0;    // mean per-image estimated bpp
  double lambda_mean = 0.0;
};

// Eq. (1)-style objective on x [B,3,H,W] with fresh training noise.
LossTerms loss_fixed(const Model& model, const Tensor& x, double lambda,
                     double distortion_scale, Rng& noise);

// VBR objective. `y` is g_a(x) (pass it in so a frozen encoder can be
// evaluated once); lambdas holds one value per batch item or one shared.
LossTerms loss_vbr(const Model& model, const Tensor& x, const Tensor& y,
                   std::span<const double> lambdas, double distortion_scale,
                   VbrLoss form, Rng& noise);

// Distinct lambdas drawn uniformly without replacement from {1..set_max}.
std::vector<double> sample_lambdas(int count, int set_max, Rng& rng);

double learning_rate(LrSchedule schedule, double base_lr, int epoch);

struct TrainLogRow {
  uint64_t step;
  double loss, distortion, rate_bpp, lambda_mean;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::ostream* csv = nullptr;  // header "step,loss,D,R_bpp,lambda_mean"
  int every = 1;

  void record(const TrainLogRow& row);
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, Model last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const Model& last_good() const { return last_good_; }

 private:
  Model last_good_;
};

// Phase 1: transforms + density under loss_fixed(lambda_pretrain). Starts
// from a fresh model seeded by config.seed.
Model train_base(const TrainConfig& config, std::span<const Tensor> dataset,
                 TrainLog* log = nullptr);

// Phase 2: attaches a fresh ModNet (unless one exists) and trains only it.
// The returned model's base tensors are bit-identical to `base`.
Model train_modnet(const TrainConfig& config, const Model& base,
                   std::span<const Tensor> dataset, TrainLog* log = nullptr);

}  // namespace modnic

#endif  // MODNIC_TRAINER_H_
