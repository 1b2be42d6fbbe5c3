#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "modnic/gradcheck.h"
#include "modnic/modnet.h"

namespace modnic {
namespace {

Tensor random_latents(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = 3.0 * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

TEST(ScaleLambda, LogDomain) {
  EXPECT_EQ(scale_lambda(1.0), 0.0);
  EXPECT_DOUBLE_EQ(scale_lambda(256.0), 1.0);
  EXPECT_DOUBLE_EQ(scale_lambda(16.0), 0.5);
}

TEST(BinaryModulator, ZeroParamsGiveHalf) {
  const auto bm = BinaryModulatorParams::zeros(6);
  const Tensor out = bm_forward(bm, Tensor({2, 1}, {0.3, 0.9}));
  ASSERT_EQ(out.shape(), (Shape{2, 6}));
  for (double v : out.values()) EXPECT_EQ(v, 0.5);
}

TEST(BinaryModulator, DeterministicAndInUnitInterval) {
  Rng rng(1);
  const auto bm = BinaryModulatorParams::create(8, rng);
  const Tensor lam(Shape{1, 1}, std::vector<double>{0.4});
  const Tensor a = bm_forward(bm, lam), b = bm_forward(bm, lam);
  EXPECT_TRUE(std::ranges::equal(a.values(), b.values()));
  for (double v : a.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(BinaryModulator, GradientMatchesFiniteDifferences) {
  const auto r = run_gradcheck_case("bm_forward", 100, 3);
  EXPECT_TRUE(r.passed()) << r.max_relative_error;
}

TEST(ModNet, MaskShapeRangeAndDeterminism) {
  Rng rng(2);
  ModNetConfig c;
  c.latent_channels = 6;
  c.width = 5;
  auto net = ModNetParams::create(c, rng);
  for (auto [name, t] : net.named_parameters()) {
    for (double& v : t.mutable_values()) v += 0.1 * rng.normal();
  }
  const Tensor y = random_latents({2, 6, 3, 4}, rng);
  const std::vector<double> lambdas = {1.0, 200.0};
  const Tensor m = modnet_forward(net, y, lambdas);
  ASSERT_EQ(m.shape(), y.shape());
  for (double v : m.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const Tensor again = modnet_forward(net, y, lambdas);
  EXPECT_TRUE(std::ranges::equal(m.values(), again.values()));
}

TEST(ModNet, SharedLambdaMatchesPerItemList) {
  Rng rng(3);
  ModNetConfig c;
  c.latent_channels = 4;
  c.width = 4;
  const auto net = ModNetParams::create(c, rng);
  const Tensor y = random_latents({3, 4, 2, 2}, rng);
  const Tensor a = modnet_forward(net, y, 32.0);
  const std::vector<double> same = {32.0, 32.0, 32.0};
  const Tensor b = modnet_forward(net, y, same);
  EXPECT_TRUE(std::ranges::equal(a.values(), b.values()));
}

TEST(ModNet, GatesAreSpatiallyShared) {
  // With a spatially constant input every position sees the same 1x1 convs
  // and the same broadcast gates, so the mask is constant per channel.
  Rng rng(4);
  ModNetConfig c;
  c.latent_channels = 3;
  c.width = 4;
  const auto net = ModNetParams::create(c, rng);
  Tensor y({1, 3, 4, 5});
  auto v = y.mutable_values();
  for (int ch = 0; ch < 3; ++ch)
    for (int i = 0; i < 20; ++i) v[ch * 20 + i] = ch - 1.3;
  const Tensor m = modnet_forward(net, y, 7.0);
  for (int ch = 0; ch < 3; ++ch)
    for (int i = 1; i < 20; ++i) EXPECT_EQ(m.values()[ch * 20 + i], m.values()[ch * 20]);
}

TEST(ModNet, RejectsLambdaOutsideRange) {
  Rng rng(5);
  ModNetConfig c;
  c.latent_channels = 2;
  c.width = 2;
  const auto net = ModNetParams::create(c, rng);
  const Tensor y({1, 2, 1, 1});
  EXPECT_THROW(modnet_forward(net, y, 0.5), std::invalid_argument);
  EXPECT_THROW(modnet_forward(net, y, 300.0), std::invalid_argument);
  const std::vector<double> wrong = {1.0, 2.0};
  EXPECT_THROW(modnet_forward(net, y, wrong), std::invalid_argument);
}

TEST(ModNet, GradientMatchesFiniteDifferences) {
  const auto r = run_gradcheck_case("modnet_forward", 100, 5);
  EXPECT_TRUE(r.passed()) << r.max_relative_error;
}

TEST(ModNet, ParameterNamesAreUniqueAndComplete) {
  Rng rng(6);
  ModNetConfig c;
  c.latent_channels = 3;
  c.width = 4;
  const auto net = ModNetParams::create(c, rng);
  const auto named = net.named_parameters();
  EXPECT_EQ(named.size(), static_cast<size_t>(2 * kModNetConvs + 6 * kModNetModulators));
  std::set<std::string> names;
  for (const auto& [n, t] : named) names.insert(n);
  EXPECT_EQ(names.size(), named.size());
}

TEST(ApplyMask, SoftAndHardModes) {
  const Tensor y({4}, {1.0, -2.0, 3.0, -4.0});
  const Tensor ones = Tensor::full({4}, 1.0);
  EXPECT_TRUE(std::ranges::equal(apply_mask(y, ones, MaskMode::kSoft).values(), y.values()));
  const Tensor dropped = apply_mask(y, Tensor::full({4}, 0.4), MaskMode::kHard);
  for (double v : dropped.values()) {
    EXPECT_EQ(v, 0.0);
  }
  const Tensor binary({4}, {1.0, 0.0, 0.0, 1.0});
  EXPECT_TRUE(std::ranges::equal(apply_mask(y, binary, MaskMode::kSoft).values(),
                                 apply_mask(y, binary, MaskMode::kHard).values()));
  const Tensor half({4}, {0.5, 0.49, 0.51, 0.6});
  const Tensor hard = apply_mask(y, half, MaskMode::kHard);
  EXPECT_EQ(hard.values()[0], 1.0);
  EXPECT_EQ(hard.values()[1], 0.0);
  EXPECT_EQ(hard.values()[2], 3.0);
}

TEST(ApplyMask, HardIndicatorIsConstantForBackward) {
  Tensor y({2}, {1.0, 2.0}, true);
  Tensor m({2}, {0.7, 0.2}, true);
  backward(sum(apply_mask(y, m, MaskMode::kHard)));
  EXPECT_EQ(y.grad()[0], 1.0);
  EXPECT_EQ(y.grad()[1], 0.0);
  EXPECT_TRUE(m.grad().empty() || (m.grad()[0] == 0.0 && m.grad()[1] == 0.0));
}

}  // namespace
}  // namespace modnic
