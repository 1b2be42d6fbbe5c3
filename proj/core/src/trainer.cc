#include "modnic/trainer.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "modnic/density.h"
#include "modnic/io.h"
#include "modnic/modnet.h"

namespace modnic {

namespace {

// Shared rate-distortion objective over a reconstruction and its noisy
// latents. lambda_weights[i] multiplies image i's MSE.
LossTerms rd_objective(const Model& model, const Tensor& x,
                       const Tensor& x_hat, const Tensor& y_tilde,
                       std::span<const double> lambda_weights,
                       double distortion_scale, double lambda_mean) {
  const int batch = x.dim(0);
  const int channels = x.dim(1);
  const int h = x.dim(2);
  const int w = x.dim(3);
  const double pixels = static_cast<double>(h) * w;
  const double per_image = static_cast<double>(channels) * pixels;

  const Tensor diff = sub(x, x_hat);
  const Tensor sq = mul(diff, diff);
  std::vector<double> weights(static_cast<size_t>(batch) * channels);
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      weights[b * channels + c] =
          lambda_weights[b] * distortion_scale / (per_image * batch);
  const Tensor weighted =
      sum(mul(sq, broadcast_spatial(Tensor({batch, channels}, std::move(weights)), h, w)));
  const Tensor bits = rate_bits(model.density, y_tilde);
  const Tensor rate = scale(bits, 1.0 / (pixels * batch));

  LossTerms out;
  out.loss = add(weighted, rate);
  double sq_total = 0.0;
  for (double v : sq.values()) sq_total += v;
  out.distortion = sq_total / (per_image * batch);
  out.rate_bpp = rate.item();
  out.lambda_mean = lambda_mean;
  return out;
}

std::vector<Tensor> tensors_of(
    const std::vector<std::pair<std::string, Tensor>>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& [n, t] : named) out.push_back(t);
  return out;
}

void set_grad(const std::vector<std::pair<std::string, Tensor>>& named, bool on) {
  for (auto [n, t] : named) t.set_requires_grad(on);
}

// Epoch-wise shuffled mini-batches over a dataset.
class BatchSampler {
 public:
  BatchSampler(size_t size, int batch, uint64_t seed)
      : order_(size), batch_(batch), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    shuffle();
  }

  std::vector<size_t> next() {
    std::vector<size_t> out;
    while (static_cast<int>(out.size()) < batch_) {
      if (pos_ == order_.size()) {
        shuffle();
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void shuffle() {
    for (size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[rng_.below(i)]);
    }
  }

  std::vector<size_t> order_;
  int batch_;
  size_t pos_ = 0;
  Rng rng_;
};

Tensor gather(std::span<const Tensor> items, const std::vector<size_t>& idx) {
  std::vector<Tensor> picked;
  picked.reserve(idx.size());
  for (size_t i : idx) picked.push_back(items[i]);
  return stack_batch(picked);
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> s;
  s.reserve(params.size());
  for (const auto& p : params) s.emplace_back(p.values().begin(), p.values().end());
  return s;
}

Model restore_copy(const Model& model, const std::vector<Tensor>& params,
                   const std::vector<std::vector<double>>& values) {
  Model copy = model.clone();
  auto named = copy.named_parameters();
  // params were taken from model in the same order as the trainable subset;
  // match by identity of position within the full list.
  const auto all = model.named_parameters();
  for (size_t i = 0, k = 0; i < all.size() && k < params.size(); ++i) {
    if (&all[i].second.node() == &params[k].node()) {
      auto dst = named[i].second.mutable_values();
      std::copy(values[k].begin(), values[k].end(), dst.begin());
      ++k;
    }
  }
  return copy;
}

void require_dataset(std::span<const Tensor> dataset) {
  if (dataset.empty()) throw std::invalid_argument("training: empty dataset");
  for (const auto& t : dataset) {
    if (t.shape() != dataset[0].shape()) {
      throw std::invalid_argument("training: dataset images differ in shape");
    }
  }
}

int steps_per_epoch(size_t dataset, int batch) {
  return static_cast<int>((dataset + batch - 1) / batch);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::toy() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.model.latent_channels = 192;
  c.model.hidden_channels = 192;
  c.model.modnet_width = 100;
  c.batch_size = 12;
  c.base_lr = 5e-5;
  c.modnet_lr = 5e-5;
  c.schedule = LrSchedule::kPaper;
  c.train_images = 600000;
  c.image_size = 256;
  c.base_steps = 20 * steps_per_epoch(c.train_images, c.batch_size);
  c.modnet_steps = c.base_steps;
  return c;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  auto kv = parse_key_values(text);
  TrainConfig c;
  if (auto it = kv.find("preset"); it != kv.end()) {
    if (it->second == "paper") {
      c = paper();
    } else if (it->second != "toy") {
      throw std::invalid_argument("config: unknown preset '" + it->second + "'");
    }
    kv.erase(it);
  }
  for (const auto& [key, value] : kv) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };
    try {
      if (key == "latent_channels") c.model.latent_channels = as_int();
      else if (key == "hidden_channels") c.model.hidden_channels = as_int();
      else if (key == "density_stages") c.model.density_stages = as_int();
      else if (key == "density_width") c.model.density_width = as_int();
      else if (key == "modnet_width") c.model.modnet_width = as_int();
      else if (key == "lambda_max") c.model.lambda_max = as_double();
      else if (key == "support") c.model.support = as_int();
      else if (key == "precision") c.model.precision = as_int();
      else if (key == "batch_size") c.batch_size = as_int();
      else if (key == "base_steps") c.base_steps = as_int();
      else if (key == "modnet_steps") c.modnet_steps = as_int();
      else if (key == "base_lr") c.base_lr = as_double();
      else if (key == "modnet_lr") c.modnet_lr = as_double();
      else if (key == "schedule") {
        if (value == "constant") c.schedule = LrSchedule::kConstant;
        else if (value == "paper") c.schedule = LrSchedule::kPaper;
        else throw std::invalid_argument("schedule must be constant or paper");
      } else if (key == "lambda_pretrain") c.lambda_pretrain = as_double();
      else if (key == "lambda_set_max") c.lambda_set_max = as_int();
      else if (key == "distortion_scale") c.distortion_scale = as_double();
      else if (key == "vbr_loss") {
        if (value == "weighted") c.vbr_loss = VbrLoss::kWeighted;
        else if (value == "literal") c.vbr_loss = VbrLoss::kLiteral;
        else throw std::invalid_argument("vbr_loss must be weighted or literal");
      } else if (key == "adam_beta1") c.adam.beta1 = as_double();
      else if (key == "adam_beta2") c.adam.beta2 = as_double();
      else if (key == "adam_eps") c.adam.eps = as_double();
      else if (key == "seed") c.seed = std::stoull(value);
      else if (key == "train_images") c.train_images = as_int();
      else if (key == "image_size") c.image_size = as_int();
      else if (key == "data_seed") c.data_seed = std::stoull(value);
      else if (key == "log_every") c.log_every = as_int();
      else throw std::invalid_argument("unknown key");
    } catch (const std::exception& e) {
      throw std::invalid_argument("config: " + key + " = " + value + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "latent_channels = " << model.latent_channels << "\n"
     << "hidden_channels = " << model.hidden_channels << "\n"
     << "density_stages = " << model.density_stages << "\n"
     << "density_width = " << model.density_width << "\n"
     << "modnet_width = " << model.modnet_width << "\n"
     << "lambda_max = " << model.lambda_max << "\n"
     << "support = " << model.support << "\n"
     << "precision = " << model.precision << "\n"
     << "batch_size = " << batch_size << "\n"
     << "base_steps = " << base_steps << "\n"
     << "modnet_steps = " << modnet_steps << "\n"
     << "base_lr = " << base_lr << "\n"
     << "modnet_lr = " << modnet_lr << "\n"
     << "schedule = " << (schedule == LrSchedule::kPaper ? "paper" : "constant") << "\n"
     << "lambda_pretrain = " << lambda_pretrain << "\n"
     << "lambda_set_max = " << lambda_set_max << "\n"
     << "distortion_scale = " << distortion_scale << "\n"
     << "vbr_loss = " << (vbr_loss == VbrLoss::kLiteral ? "literal" : "weighted") << "\n"
     << "adam_beta1 = " << adam.beta1 << "\n"
     << "adam_beta2 = " << adam.beta2 << "\n"
     << "adam_eps = " << adam.eps << "\n"
     << "seed = " << seed << "\n"
     << "train_images = " << train_images << "\n"
     << "image_size = " << image_size << "\n"
     << "data_seed = " << data_seed << "\n"
     << "log_every = " << log_every << "\n";
  return os.str();
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (base_steps < 0 || modnet_steps < 0) fail("step counts must be >= 0");
  if (!(base_lr >= 0.0) || !(modnet_lr >= 0.0)) fail("learning rates must be >= 0");
  if (lambda_set_max < 1) fail("lambda set must be nonempty");
  if (lambda_set_max > model.lambda_max) fail("lambda_set_max exceeds lambda_max");
  if (!(lambda_pretrain > 0.0)) fail("lambda_pretrain must be > 0");
  if (!(distortion_scale > 0.0)) fail("distortion_scale must be > 0");
  if (image_size < 16 || image_size % 16 != 0) fail("image_size must be a multiple of 16");
  if (model.support < 1) fail("support must be >= 1");
  if (model.precision < 12 || model.precision > 16) fail("precision must be in [12,16]");
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    const auto g = params_[k].grad();
    if (g.empty()) continue;
    auto w = params_[k].mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Losses

LossTerms loss_fixed(const Model& model, const Tensor& x, double lambda,
                     double distortion_scale, Rng& noise) {
  if (!(lambda > 0.0)) throw std::invalid_argument("loss_fixed: lambda must be > 0");
  const Tensor y = analyze(model.transforms, x);
  const Tensor y_tilde = quantize_train(y, noise);
  const Tensor x_hat = synthesize(model.transforms, y_tilde);
  const std::vector<double> weights(x.dim(0), lambda);
  return rd_objective(model, x, x_hat, y_tilde, weights, distortion_scale, lambda);
}

LossTerms loss_vbr(const Model& model, const Tensor& x, const Tensor& y,
                   std::span<const double> lambdas, double distortion_scale,
                   VbrLoss form, Rng& noise) {
  if (!model.modnet) throw std::invalid_argument("loss_vbr: model has no ModNet");
  const int batch = x.dim(0);
  const Tensor mask = modnet_forward(*model.modnet, y, lambdas);
  const Tensor y_tilde = quantize_train(apply_mask(y, mask, MaskMode::kSoft), noise);
  const Tensor x_hat = synthesize(model.transforms, y_tilde);
  std::vector<double> weights(batch);
  double lambda_sum = 0.0;
  for (int b = 0; b < batch; ++b) {
    const double lam = lambdas[lambdas.size() == 1 ? 0 : b];
    lambda_sum += lam;
    weights[b] = form == VbrLoss::kWeighted ? lam : 1.0;
  }
  return rd_objective(model, x, x_hat, y_tilde, weights, distortion_scale,
                      lambda_sum / batch);
}

std::vector<double> sample_lambdas(int count, int set_max, Rng& rng) {
  if (count > set_max) {
    throw std::invalid_argument("sample_lambdas: batch of " + std::to_string(count) +
                                " exceeds lambda set size " + std::to_string(set_max));
  }
  // Partial Fisher-Yates over {1..set_max}.
  std::vector<int> pool(set_max);
  std::iota(pool.begin(), pool.end(), 1);
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i) {
    const size_t j = i + rng.below(set_max - i);
    std::swap(pool[i], pool[j]);
    out[i] = pool[i];
  }
  return out;
}

double learning_rate(LrSchedule schedule, double base_lr, int epoch) {
  if (schedule == LrSchedule::kConstant || epoch < 10) return base_lr;
  return base_lr * std::pow(0.5, 1 + (epoch - 10) / 3);
}

void TrainLog::record(const TrainLogRow& row) {
  if (csv && rows.empty()) {
    csv->precision(10);
    *csv << "step,loss,D,R_bpp,lambda_mean\n";
  }
  rows.push_back(row);
  if (csv && (every <= 1 || row.step % every == 0)) {
    *csv << row.step << ',' << row.loss << ',' << row.distortion << ','
         << row.rate_bpp << ',' << row.lambda_mean << '\n';
  }
}

// ---------------------------------------------------------------------------
// Training loops

Model train_base(const TrainConfig& config, std::span<const Tensor> dataset,
                 TrainLog* log) {
  config.validate();
  require_dataset(dataset);
  Rng init_rng(config.seed);
  Model model = Model::create(config.model, init_rng);
  center_latents(model.transforms,
                 dataset.first(std::min<size_t>(dataset.size(), 64)));
  model.config_echo = config.to_text();
  const auto named = model.base_parameters();
  set_grad(named, true);
  const auto params = tensors_of(named);
  Adam adam(params, config.adam);
  BatchSampler sampler(dataset.size(), config.batch_size, config.seed ^ 0x5A5A);
  Rng noise(config.seed ^ 0xA5A5);
  const int epoch_steps = steps_per_epoch(dataset.size(), config.batch_size);

  for (int step = 0; step < config.base_steps; ++step) {
    const Tensor x = gather(dataset, sampler.next());
    const auto before = snapshot(params);
    adam.zero_grad();
    LossTerms terms = loss_fixed(model, x, config.lambda_pretrain,
                                 config.distortion_scale, noise);
    const double loss = terms.loss.item();
    if (!std::isfinite(loss)) {
      set_grad(named, false);
      throw TrainingError("train_base: non-finite loss at step " +
                              std::to_string(step),
                          restore_copy(model, params, before));
    }
    backward(terms.loss);
    adam.step(learning_rate(config.schedule, config.base_lr, step / epoch_steps));
    model.step = step + 1;
    if (log) {
      log->record({model.step, loss, terms.distortion, terms.rate_bpp,
                   terms.lambda_mean});
    }
    if (config.log_every > 0 && (step + 1) % config.log_every == 0) {
      spdlog::debug("base step {} loss {:.5f} D {:.6f} R {:.4f}", step + 1,
                    loss, terms.distortion, terms.rate_bpp);
    }
  }
  adam.zero_grad();
  set_grad(named, false);
  return model;
}

Model train_modnet(const TrainConfig& config, const Model& base,
                   std::span<const Tensor> dataset, TrainLog* log) {
  config.validate();
  require_dataset(dataset);
  if (config.batch_size > config.lambda_set_max) {
    throw std::invalid_argument("train_modnet: batch size " +
                                std::to_string(config.batch_size) +
                                " exceeds |S| = " +
                                std::to_string(config.lambda_set_max));
  }
  Model model = base.clone();
  model.config_echo = config.to_text();
  Rng init_rng(config.seed ^ 0x3C3C);
  if (!model.modnet) model.attach_modnet(init_rng);
  set_grad(model.base_parameters(), false);
  const auto named = model.modnet->named_parameters();
  set_grad(named, true);
  const auto params = tensors_of(named);
  Adam adam(params, config.adam);

  // The encoder is frozen, so latents are computed once.
  std::vector<Tensor> latents;
  {
    NoGradGuard guard;
    latents.reserve(dataset.size());
    for (const auto& x : dataset) latents.push_back(analyze(model.transforms, x));
  }
  BatchSampler sampler(dataset.size(), config.batch_size, config.seed ^ 0x5A5A);
  Rng lambda_rng(config.seed ^ 0x7E7E);
  Rng noise(config.seed ^ 0xA5A5);
  const int epoch_steps = steps_per_epoch(dataset.size(), config.batch_size);
  const uint64_t start = model.step;

  for (int step = 0; step < config.modnet_steps; ++step) {
    const auto idx = sampler.next();
    const Tensor x = gather(dataset, idx);
    const Tensor y = gather(latents, idx);
    const auto lambdas =
        sample_lambdas(config.batch_size, config.lambda_set_max, lambda_rng);
    const auto before = snapshot(params);
    adam.zero_grad();
    LossTerms terms = loss_vbr(model, x, y, lambdas, config.distortion_scale,
                               config.vbr_loss, noise);
    const double loss = terms.loss.item();
    if (!std::isfinite(loss)) {
      set_grad(named, false);
      throw TrainingError("train_modnet: non-finite loss at step " +
                              std::to_string(step),
                          restore_copy(model, params, before));
    }
    backward(terms.loss);
    adam.step(learning_rate(config.schedule, config.modnet_lr, step / epoch_steps));
    model.step = start + step + 1;
    if (log) {
      log->record({model.step, loss, terms.distortion, terms.rate_bpp,
                   terms.lambda_mean});
    }
    if (config.log_every > 0 && (step + 1) % config.log_every == 0) {
      spdlog::debug("modnet step {} loss {:.5f} D {:.6f} R {:.4f}", step + 1,
                    loss, terms.distortion, terms.rate_bpp);
    }
  }
  adam.zero_grad();
  set_grad(named, false);
  return model;
}

}  // namespace modnic
