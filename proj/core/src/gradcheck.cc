#include "modnic/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

#include "modnic/density.h"
#include "modnic/model.h"
#include "modnic/modnet.h"
#include "modnic/rng.h"
#include "modnic/tensor.h"
#include "modnic/trainer.h"
#include "modnic/transforms.h"

namespace modnic {

namespace {

constexpr double kStep = 1e-5;
constexpr double kAbsoluteFloor = 1e-6;
constexpr int kMaxRejectFactor = 4;

struct Setup {
  std::vector<Tensor> leaves;
  std::function<Tensor()> f;
};

using Factory = std::function<Setup(Rng&)>;

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v), true);
}

// Scalar probe: sum(out * w) for a fixed random w.
std::function<Tensor()> probe(std::function<Tensor()> op, Rng& rng) {
  Shape shape;
  {
    NoGradGuard guard;
    shape = op().shape();
  }
  Tensor w = random_tensor(shape, rng);
  w.set_requires_grad(false);
  return [op = std::move(op), w] { return sum(mul(op(), w)); };
}

Setup unary(Rng& rng, Tensor (*fn)(const Tensor&)) {
  Tensor x = random_tensor({2, 3, 4, 4}, rng, 2.0);
  return {{x}, probe([x, fn] { return fn(x); }, rng)};
}

Setup binary(Rng& rng, Tensor (*fn)(const Tensor&, const Tensor&)) {
  Tensor a = random_tensor({2, 3, 4, 4}, rng);
  Tensor b = random_tensor({2, 3, 4, 4}, rng);
  return {{a, b}, probe([a, b, fn] { return fn(a, b); }, rng)};
}

// Zero-initialized biases put whole ReLU planes exactly on the kink, where
// the central difference averages both slopes. Jitter moves them off it.
std::vector<Tensor> leaves_of(const std::vector<std::pair<std::string, Tensor>>& named,
                              Rng* jitter = nullptr) {
  std::vector<Tensor> out;
  for (auto [name, t] : named) {
    if (jitter) {
      for (double& v : t.mutable_values()) v += 0.05 * jitter->normal();
    }
    t.set_requires_grad(true);
    out.push_back(t);
  }
  return out;
}

Model small_model(Rng& rng, bool with_modnet) {
  ModelConfig c;
  c.latent_channels = 4;
  c.hidden_channels = 4;
  c.modnet_width = 4;
  Model m = Model::create(c, rng);
  if (with_modnet) m.attach_modnet(rng);
  return m;
}

Tensor random_images(Rng& rng) {
  std::vector<double> v(2 * 3 * 32 * 32);
  for (double& x : v) x = rng.uniform();
  return Tensor({2, 3, 32, 32}, std::move(v));
}

Setup vbr_setup(Rng& rng, VbrLoss form) {
  auto model = std::make_shared<Model>(small_model(rng, true));
  const Tensor x = random_images(rng);
  const std::vector<double> lambdas = {1.0 + rng.below(128), 129.0 + rng.below(128)};
  const uint64_t noise_seed = rng.next_u64();
  return {leaves_of(model->named_parameters(), &rng), [model, x, lambdas, noise_seed, form] {
            Rng noise(noise_seed);
            const Tensor y = analyze(model->transforms, x);
            return loss_vbr(*model, x, y, lambdas, 1.0, form, noise).loss;
          }};
}

const std::map<std::string, Factory>& registry() {
  static const std::map<std::string, Factory> cases = {
      {"conv2d",
       [](Rng& rng) {
         const int stride = 1 + static_cast<int>(rng.below(2));
         const int k = rng.below(2) ? 5 : 3;
         Tensor x = random_tensor({2, 3, 7, 6}, rng);
         Tensor w = random_tensor({4, 3, k, k}, rng, 0.5);
         Tensor b = random_tensor({4}, rng);
         return Setup{{x, w, b}, probe([=] { return conv2d(x, w, b, stride, k / 2); }, rng)};
       }},
      {"conv_transpose2d",
       [](Rng& rng) {
         const int stride = 1 + static_cast<int>(rng.below(2));
         const int k = rng.below(2) ? 5 : 3;
         Tensor x = random_tensor({2, 4, 4, 5}, rng);
         Tensor w = random_tensor({4, 3, k, k}, rng, 0.5);
         Tensor b = random_tensor({3}, rng);
         return Setup{{x, w, b}, probe([=] {
                        return conv_transpose2d(x, w, b, stride, k / 2, stride - 1);
                      }, rng)};
       }},
      {"dense",
       [](Rng& rng) {
         Tensor x = random_tensor({3, 5}, rng);
         Tensor w = random_tensor({4, 5}, rng);
         Tensor b = random_tensor({4}, rng);
         return Setup{{x, w, b}, probe([=] { return dense(x, w, b); }, rng)};
       }},
      {"relu", [](Rng& rng) { return unary(rng, relu); }},
      {"sigmoid", [](Rng& rng) { return unary(rng, sigmoid); }},
      {"tanh", [](Rng& rng) { return unary(rng, modnic::tanh); }},
      {"softplus", [](Rng& rng) { return unary(rng, softplus); }},
      {"neg", [](Rng& rng) { return unary(rng, neg); }},
      {"add", [](Rng& rng) { return binary(rng, add); }},
      {"sub", [](Rng& rng) { return binary(rng, sub); }},
      {"mul", [](Rng& rng) { return binary(rng, mul); }},
      {"scale",
       [](Rng& rng) {
         Tensor x = random_tensor({2, 3, 4, 4}, rng);
         const double f = rng.uniform(-3.0, 3.0);
         return Setup{{x}, probe([=] { return scale(x, f); }, rng)};
       }},
      {"broadcast_spatial",
       [](Rng& rng) {
         Tensor v = random_tensor({2, 3}, rng);
         return Setup{{v}, probe([=] { return broadcast_spatial(v, 3, 4); }, rng)};
       }},
      {"sum",
       [](Rng& rng) {
         Tensor x = random_tensor({2, 3, 4, 4}, rng);
         return Setup{{x}, [=] { return sum(mul(x, x)); }};
       }},
      {"mean",
       [](Rng& rng) {
         Tensor x = random_tensor({2, 3, 4, 4}, rng);
         return Setup{{x}, [=] { return mean(mul(x, x)); }};
       }},
      {"quantize_train",
       [](Rng& rng) {
         Tensor y = random_tensor({2, 3, 2, 2}, rng, 3.0);
         const uint64_t seed = rng.next_u64();
         return Setup{{y}, probe([=] {
                        Rng noise(seed);
                        return quantize_train(y, noise);
                      }, rng)};
       }},
      {"rate_bits",
       [](Rng& rng) {
         DensityConfig dc;
         dc.channels = 3;
         auto density = std::make_shared<MonotoneCdfNetwork>(MonotoneCdfNetwork::create(dc, rng));
         for (auto [name, t] : density->named_parameters()) {
           for (double& v : t.mutable_values()) v += 0.3 * rng.normal();
         }
         Tensor y = random_tensor({2, 3, 3, 3}, rng, 3.0);
         auto leaves = leaves_of(density->named_parameters());
         leaves.push_back(y);
         return Setup{leaves, [density, y] { return rate_bits(*density, y); }};
       }},
      {"bm_forward",
       [](Rng& rng) {
         auto bm = std::make_shared<BinaryModulatorParams>(BinaryModulatorParams::create(6, rng));
         Tensor lam = random_tensor({3, 1}, rng, 0.5);
         auto leaves = leaves_of({{"w1", bm->w1}, {"b1", bm->b1}, {"w2", bm->w2},
                                  {"b2", bm->b2}, {"w3", bm->w3}, {"b3", bm->b3}},
                                 &rng);
         leaves.push_back(lam);
         return Setup{leaves, probe([bm, lam] { return bm_forward(*bm, lam); }, rng)};
       }},
      {"modnet_forward",
       [](Rng& rng) {
         ModNetConfig mc;
         mc.latent_channels = 4;
         mc.width = 5;
         auto net = std::make_shared<ModNetParams>(ModNetParams::create(mc, rng));
         Tensor y = random_tensor({2, 4, 2, 3}, rng, 2.0);
         const std::vector<double> lambdas = {1.0 + rng.uniform() * 255.0,
                                              1.0 + rng.uniform() * 255.0};
         auto leaves = leaves_of(net->named_parameters(), &rng);
         leaves.push_back(y);
         return Setup{leaves, probe([net, y, lambdas] {
                        return modnet_forward(*net, y, lambdas);
                      }, rng)};
       }},
      {"apply_mask",
       [](Rng& rng) {
         Tensor y = random_tensor({2, 3, 2, 2}, rng);
         Tensor m = random_tensor({2, 3, 2, 2}, rng);
         return Setup{{y, m}, probe([=] { return apply_mask(y, m, MaskMode::kSoft); }, rng)};
       }},
      {"loss_fixed",
       [](Rng& rng) {
         auto model = std::make_shared<Model>(small_model(rng, false));
         const Tensor x = random_images(rng);
         const double lambda = 1.0 + rng.uniform() * 255.0;
         const uint64_t noise_seed = rng.next_u64();
         return Setup{leaves_of(model->named_parameters(), &rng), [=] {
                        Rng noise(noise_seed);
                        return loss_fixed(*model, x, lambda, 1.0, noise).loss;
                      }};
       }},
      {"loss_vbr", [](Rng& rng) { return vbr_setup(rng, VbrLoss::kWeighted); }},
      {"loss_vbr_literal", [](Rng& rng) { return vbr_setup(rng, VbrLoss::kLiteral); }},
  };
  return cases;
}

double eval_shifted(const Setup& s, const std::vector<std::vector<double>>& base,
                    const std::vector<std::vector<double>>& dir, double h) {
  for (size_t k = 0; k < s.leaves.size(); ++k) {
    Tensor leaf = s.leaves[k];
    auto v = leaf.mutable_values();
    for (size_t i = 0; i < v.size(); ++i) v[i] = base[k][i] + h * dir[k][i];
  }
  NoGradGuard guard;
  return s.f().item();
}

}  // namespace

std::vector<std::string> gradcheck_cases() {
  std::vector<std::string> names;
  for (const auto& [name, f] : registry()) names.push_back(name);
  return names;
}

GradCheckReport run_gradcheck_case(const std::string& name, int points, uint64_t seed,
                                   double tolerance) {
  const auto it = registry().find(name);
  if (it == registry().end()) throw std::invalid_argument("gradcheck: unknown case " + name);
  GradCheckReport report;
  report.name = name;
  report.tolerance = tolerance;
  Rng rng(seed);
  int attempts = 0;
  while (report.points < points) {
    if (++attempts > kMaxRejectFactor * points) break;
    const Setup s = it->second(rng);

    for (auto leaf : s.leaves) leaf.zero_grad();
    backward(s.f());

    std::vector<std::vector<double>> base, dir;
    double norm = 0.0;
    for (const auto& leaf : s.leaves) {
      base.emplace_back(leaf.values().begin(), leaf.values().end());
      std::vector<double> d(leaf.numel());
      for (double& x : d) {
        x = rng.normal();
        norm += x * x;
      }
      dir.push_back(std::move(d));
    }
    norm = std::sqrt(norm);
    double analytic = 0.0;
    for (size_t k = 0; k < s.leaves.size(); ++k) {
      const auto g = s.leaves[k].grad();
      for (size_t i = 0; i < dir[k].size(); ++i) {
        dir[k][i] /= norm;
        if (!g.empty()) analytic += g[i] * dir[k][i];
      }
    }

    const double fd_h = (eval_shifted(s, base, dir, kStep) - eval_shifted(s, base, dir, -kStep)) /
                        (2.0 * kStep);
    const double fd_half =
        (eval_shifted(s, base, dir, kStep / 2) - eval_shifted(s, base, dir, -kStep / 2)) / kStep;
    eval_shifted(s, base, dir, 0.0);

    const double scale = std::max({std::abs(fd_half), std::abs(analytic), kAbsoluteFloor});
    if (std::abs(fd_h - fd_half) > 0.5 * tolerance * scale) {
      ++report.rejected;  // not smooth inside the stencil
      continue;
    }
    report.max_relative_error =
        std::max(report.max_relative_error, std::abs(analytic - fd_half) / scale);
    ++report.points;
  }
  return report;
}

std::vector<GradCheckReport> run_gradcheck(int points, uint64_t seed, double tolerance) {
  std::vector<GradCheckReport> out;
  uint64_t k = 0;
  for (const auto& name : gradcheck_cases()) {
    out.push_back(run_gradcheck_case(name, points, seed + 0x9E3779B97F4A7C15ull * ++k, tolerance));
  }
  return out;
}

}  // namespace modnic
