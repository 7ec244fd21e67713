#include <gtest/gtest.h>

#include <random>

#include "jitterlab/attacks.hpp"

namespace jitterlab {
namespace {

Image random_image(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(n, n);
  for (auto& v : img.pixels()) v = u(eng);
  return img;
}

Architecture small_arch() {
  Architecture a;
  a.image_size = 16;
  a.channels = {4, 8};
  a.feature_dim = 12;
  a.head_hidden = 10;
  return a;
}

double summed_l1(const LinearGazeModel<double>& m, const Image& x, const GazeLabel& y) {
  const auto p = m.predict(std::span<const Image>(&x, 1))[0];
  return std::abs(p.pitch - y.pitch) + std::abs(p.yaw - y.yaw);
}

TEST(Fgsm, ZeroEpsilonIsIdentity) {
  const GazeModel<double> m(small_arch(), 1);
  const auto x = random_image(16, 2);
  AttackConfig c;
  c.epsilon = 0.0;
  EXPECT_EQ(fgsm(m, x, GazeLabel{0.1, 0.1}, c), x);
  EXPECT_EQ(pgd(m, x, GazeLabel{0.1, 0.1}, c), x);
}

TEST(Fgsm, DeviationIsSignTimesEpsilon) {
  const GazeModel<double> m(small_arch(), 1);
  Image x(16, 16, 0.5);
  const AttackConfig c;
  const auto y = fgsm(m, x, GazeLabel{0.2, -0.1}, c);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = y[i] - x[i];
    EXPECT_TRUE(std::abs(d) < 1e-15 || std::abs(std::abs(d) - c.epsilon) < 1e-12) << d;
  }
}

TEST(Fgsm, LinearModelLossIncreaseIsEpsTimesGradientL1) {
  // For an affine model the summed L1 loss is linear near x (no sign flips of
  // the residual within the ball), so the increase equals eps * ||grad||_1.
  for (std::uint64_t s = 0; s < 20; ++s) {
    const LinearGazeModel<double> m(16, s);
    Image x(16, 16);
    std::mt19937_64 eng(s);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    for (auto& v : x.pixels()) v = u(eng);
    const GazeLabel y{0.5, -0.5};
    const auto& w = m.params().at("L.fc.w");
    const auto p = m.predict(std::span<const Image>(&x, 1))[0];
    const double sp = p.pitch > y.pitch ? 1 : -1, sy = p.yaw > y.yaw ? 1 : -1;
    double g1 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) g1 += std::abs(sp * w[2 * i] + sy * w[2 * i + 1]);
    AttackConfig c;
    const auto adv = fgsm(m, x, y, c);
    EXPECT_NEAR(summed_l1(m, adv, y) - summed_l1(m, x, y), c.epsilon * g1, 1e-6);
  }
}

TEST(Pgd, SingleFullStepEqualsFgsm) {
  const GazeModel<double> m(small_arch(), 3);
  Image x(16, 16, 0.5);
  AttackConfig c;
  c.pgd_steps = 1;
  c.pgd_step_size = c.epsilon;
  EXPECT_EQ(pgd(m, x, GazeLabel{0.1, 0.2}, c), fgsm(m, x, GazeLabel{0.1, 0.2}, c));
}

TEST(Attacks, StayInsideBallAndRange) {
  const GazeModel<double> m(small_arch(), 4);
  const GazeModel<float> mf(small_arch(), 5);
  AttackConfig c;
  c.epsilon = 0.05;
  c.pgd_step_size = 0.02;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto x = random_image(16, 100 + s);
    const GazeLabel y{0.1, -0.2};
    for (const auto& adv : {fgsm(m, x, y, c), pgd(m, x, y, c), fgsm(mf, x, y, c), pgd(mf, x, y, c)}) {
      EXPECT_LE(max_abs_diff(adv, x), c.epsilon + 1e-7);
      for (double v : adv.pixels()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Attacks, ConfigValidation) {
  EXPECT_THROW((AttackConfig{-0.1, 4, 0.005, 0}.validate()), ConfigError);
  EXPECT_THROW((AttackConfig{0.01, 0, 0.005, 0}.validate()), ConfigError);
  EXPECT_THROW((AttackConfig{0.01, 4, 0.02, 0}.validate()), ConfigError);
  EXPECT_NO_THROW((AttackConfig{0.0, 4, 0.005, 0}.validate()));
}

TEST(Augment, CoinIsFairAndSeeded) {
  const auto a = attack_coins(10000, 17);
  EXPECT_EQ(a, attack_coins(10000, 17));
  const auto heads = std::count(a.begin(), a.end(), true);
  EXPECT_NEAR(heads / 10000.0, 0.5, 0.03);
}

TEST(Augment, UsesTheChosenAttackPerImage) {
  const GazeModel<double> m(small_arch(), 6);
  std::vector<Image> xs;
  std::vector<GazeLabel> ys;
  for (std::uint64_t s = 0; s < 8; ++s) {
    xs.push_back(random_image(16, 200 + s));
    ys.push_back({0.05 * s, -0.05 * s});
  }
  const AttackConfig c;
  const auto r = augment_batch(m, xs, ys, c, 99);
  ASSERT_EQ(r.images.size(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto expect = r.used_fgsm[i] ? fgsm(m, xs[i], ys[i], c) : pgd(m, xs[i], ys[i], c);
    EXPECT_EQ(r.images[i], expect) << i;
  }
  AttackConfig zero = c;
  zero.epsilon = 0.0;
  EXPECT_EQ(augment_batch(m, xs, ys, zero, 99).images, xs);
}

}  // namespace
}  // namespace jitterlab
