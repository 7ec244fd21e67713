#include <iostream>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "jitterlab/losses.hpp"
#include "support/oracles.hpp"

namespace jitterlab {
namespace {

using Tp = ad::Tape<double>;

Tensor<double> rnd(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = u(eng);
  return t;
}

std::vector<std::vector<double>> rows(const Tensor<double>& t) {
  std::vector<std::vector<double>> r(t.dim(0));
  for (std::size_t i = 0; i < r.size(); ++i) r[i].assign(t.data() + i * t.dim(1), t.data() + (i + 1) * t.dim(1));
  return r;
}

TEST(GazeLoss, MeanL1OfResidual) {
  std::vector<GazeLabel> p{{0.1, 0.2}, {0.0, -0.1}}, y{{0.0, 0.0}, {0.1, 0.1}};
  EXPECT_NEAR(gaze_loss(std::span<const GazeLabel>(p), std::span<const GazeLabel>(y)), (0.3 + 0.3) / 2, 1e-15);
  Tp tape;
  auto l = gaze_loss(tape.constant(to_label_tensor<double>(p)), tape.constant(to_label_tensor<double>(y)));
  EXPECT_NEAR(l.value().item(), 0.3, 1e-15);
  EXPECT_EQ(gaze_loss(std::span<const GazeLabel>(y), std::span<const GazeLabel>(y)), 0.0);
  EXPECT_THROW(gaze_loss(std::span<const GazeLabel>(p), std::span<const GazeLabel>(p.data(), 1)), ShapeError);
}

TEST(CosineSim, BasicIdentities) {
  std::vector<double> f{1, -2, 3}, g{-1, 2, -3}, h{3, -6, 9}, z{0, 0, 0};
  EXPECT_NEAR(cosine_sim(f, f), 1.0, 1e-15);
  EXPECT_NEAR(cosine_sim(f, g), -1.0, 1e-15);
  EXPECT_NEAR(cosine_sim(f, h), 1.0, 1e-15);
  EXPECT_THROW(cosine_sim(f, z), NumericError);
}

TEST(Contrastive, PartnerIndexing) {
  EXPECT_EQ(contrastive_partner(0, 2), 4u);
  EXPECT_EQ(contrastive_partner(3, 2), 7u);
  EXPECT_EQ(contrastive_partner(5, 2), 1u);
  EXPECT_THROW(contrastive_partner(8, 2), ShapeError);
}

TEST(Contrastive, ClosedFormPairValues) {
  Tensor<double> same(Shape{4, 3}, 1.0);
  EXPECT_NEAR(contrastive_pair_loss(same, 0, 0.5), std::log(3.0), 1e-12);
  // anchor e1, positive e1, negatives e2 and e3
  Tensor<double> f(Shape{4, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1});
  EXPECT_NEAR(contrastive_pair_loss(f, 0, 0.5), std::log(1 + 2 * std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(contrastive_pair_loss(f, 0, 0.5), 0.2395448, 1e-6);
}

TEST(Contrastive, MatchesBruteForce) {
  for (std::size_t b : {1u, 2u, 4u}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto f = rnd({4 * b, 7}, 100 * b + seed);
      EXPECT_NEAR(contrastive_loss(f, 0.5), oracle::contrastive_batch(rows(f), b, 0.5), 1e-6);
      for (std::size_t u = 0; u < 4 * b; ++u)
        EXPECT_NEAR(contrastive_pair_loss(f, u, 0.5),
                    oracle::contrastive_directed(rows(f), u, contrastive_partner(u, b), 0.5), 1e-12);
    }
  }
}

TEST(Contrastive, IdenticalFeaturesGiveLogCount) {
  for (std::size_t b : {1u, 2u, 4u, 16u}) {
    Tensor<double> f(Shape{4 * b, 5}, 0.7);
    EXPECT_NEAR(contrastive_loss(f, 0.5), std::log(4.0 * b - 1), 1e-9);
  }
}

TEST(Contrastive, InvariantUnderConsistentPermutation) {
  const std::size_t b = 3;
  const auto f = rnd({4 * b, 4}, 7);
  const std::vector<std::size_t> perm{2, 0, 1};
  Tensor<double> g(f.shape());
  for (std::size_t blk = 0; blk < 4; ++blk)
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t k = 0; k < 4; ++k) g[(blk * b + i) * 4 + k] = f[(blk * b + perm[i]) * 4 + k];
  EXPECT_NEAR(contrastive_loss(f, 0.5), contrastive_loss(g, 0.5), 1e-12);
}

TEST(Contrastive, RejectsMalformedBatch) {
  EXPECT_THROW(contrastive_loss(rnd({6, 3}, 1), 0.5), ShapeError);
  EXPECT_THROW(contrastive_loss(rnd({4, 3}, 1), 0.0), ConfigError);
}

Architecture small_arch() {
  Architecture a;
  a.image_size = 16;
  a.channels = {4, 8};
  a.feature_dim = 12;
  a.head_hidden = 10;
  a.disc_hidden = 9;
  return a;
}

TEST(AdversarialTerms, ConstantDiscriminatorValues) {
  const auto arch = small_arch();
  const auto d = Discriminator<double>::zeros(arch);
  Tp tape;
  auto f = tape.constant(rnd({5, arch.feature_dim}, 1));
  EXPECT_NEAR(adversarial_loss(tape, d, f).value().item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(discriminator_loss(tape, d, f, f, f, f).value().item(), 2 * std::log(2.0), 1e-12);
  for (double p : d.discriminate(f.value())) EXPECT_EQ(p, 0.5);
}

TEST(AdversarialTerms, PerfectDiscriminatorLimit) {
  Tp tape;
  auto ps = tape.constant(Tensor<double>(Shape{3}, 1e-12));
  auto pt = tape.constant(Tensor<double>(Shape{3}, 1 - 1e-12));
  const double l = discriminator_loss(ps, pt).value().item();
  EXPECT_GT(l, 0.0);
  EXPECT_LT(l, 1e-10);
}

TEST(AdversarialTerms, MatchLoopOracle) {
  const auto arch = small_arch();
  const Discriminator<double> d(arch, 5);
  const auto fs = rnd({4, arch.feature_dim}, 2), ft = rnd({6, arch.feature_dim}, 3);
  const auto ps = d.discriminate(fs), pt = d.discriminate(ft);
  double src = 0, tgt = 0, adv = 0;
  for (double p : ps) src += -std::log(1 - p) / ps.size();
  for (double p : pt) tgt += -std::log(p) / pt.size();
  for (double p : pt) adv += -std::log(1 - p) / pt.size();
  Tp tape;
  auto vs = tape.constant(fs), vt = tape.constant(ft);
  EXPECT_NEAR(discriminator_loss(d.forward(tape, vs, false), d.forward(tape, vt, false)).value().item(), src + tgt,
              1e-6);
  EXPECT_NEAR(adversarial_loss(tape, d, vt).value().item(), adv, 1e-6);
}

TEST(TotalLoss, WeightedSum) {
  LossTerms<double> t{1, 2, 3, 4, 5};
  EXPECT_NEAR(total_loss(t, LossWeights{}), 6.9, 1e-12);
  EXPECT_NEAR(total_loss(t, LossWeights{0.0, 0.0, 0.5}), 3.0, 1e-15);
  Tp tape;
  auto c = [&](double v) { return tape.constant(Tensor<double>::scalar(v)); };
  LossTerms<ad::Var<double>> tv{c(1), c(2), c(3), c(4), c(5)};
  EXPECT_NEAR(total_loss(tv, LossWeights{}).value().item(), 6.9, 1e-12);
  EXPECT_THROW((LossWeights{1.0, 0.1, 0.0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{-1.0, 0.1, 0.5}.validate()), ConfigError);
}

// Gradient fidelity of every training objective, 64-bit mode.
class LossGradients : public ::testing::Test {
 protected:
  Architecture arch = small_arch();
  GazeModel<double> g{arch, 1};
  Discriminator<double> d{arch, 2};
  Tensor<double> xs = rnd({2, 1, 16, 16}, 3, 0, 1), xt = rnd({2, 1, 16, 16}, 4, 0, 1);
  Tensor<double> xs2 = rnd({2, 1, 16, 16}, 5, 0, 1), xt2 = rnd({2, 1, 16, 16}, 6, 0, 1);
  Tensor<double> ys = rnd({2, 2}, 7, -0.3, 0.3);

  template <class Build>
  double check(const oracle::Params& params, Build build, std::uint64_t seed) {
    auto loss = [&](const oracle::Params& p) {
      Tp tape;
      return build(tape, p, false).value().item();
    };
    Tp tape;
    auto l = build(tape, params, true);
    std::vector<std::string> names;
    for (const auto& kv : params) names.push_back(kv.first);
    const auto grads = tape.backward(l, names);
    const auto r = oracle::finite_difference_check(params, {grads.begin(), grads.end()}, loss, 100, seed);
    EXPECT_EQ(r.coords, 100u);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
    return r.max_rel_error;
  }
};

TEST_F(LossGradients, Gaze) {
  auto build = [&](Tp& tape, const oracle::Params& p, bool grads) {
    GazeModel<double> m(arch, p);
    return gaze_loss(m.predict(tape, tape.constant(xs), grads), tape.constant(ys));
  };
  EXPECT_LT(check(g.params(), build, 11), 1e-4);
}

TEST_F(LossGradients, Contrastive) {
  auto build = [&](Tp& tape, const oracle::Params& p, bool grads) {
    GazeModel<double> m(arch, p);
    auto f = ad::concat_rows<double>({m.extract(tape, tape.constant(xs), grads), m.extract(tape, tape.constant(xt), grads),
                                      m.extract(tape, tape.constant(xs2), grads),
                                      m.extract(tape, tape.constant(xt2), grads)});
    return contrastive_loss(f, 0.5);
  };
  oracle::Params fp;
  for (const auto& [k, v] : g.params())
    if (k.starts_with("F.")) fp.emplace(k, v);
  auto full = [&](Tp& tape, const oracle::Params& p, bool grads) {
    auto merged = g.params();
    for (const auto& [k, v] : p) merged[k] = v;
    return build(tape, merged, grads);
  };
  EXPECT_LT(check(fp, full, 12), 1e-4);
}

TEST_F(LossGradients, AdversarialWrtExtractor) {
  oracle::Params fp;
  for (const auto& [k, v] : g.params())
    if (k.starts_with("F.")) fp.emplace(k, v);
  auto build = [&](Tp& tape, const oracle::Params& p, bool grads) {
    auto merged = g.params();
    for (const auto& [k, v] : p) merged[k] = v;
    GazeModel<double> m(arch, merged);
    return adversarial_loss(tape, d, m.extract(tape, tape.constant(xt), grads));
  };
  EXPECT_LT(check(fp, build, 13), 1e-4);
}

TEST_F(LossGradients, DiscriminatorWrtItsParameters) {
  Tp ftape;
  const auto fs = g.extract(ftape, ftape.constant(xs), false).value();
  const auto ft = g.extract(ftape, ftape.constant(xt), false).value();
  auto build = [&](Tp& tape, const oracle::Params& p, bool) {
    Discriminator<double> dd(arch, p);
    return discriminator_loss(tape, dd, tape.constant(fs), tape.constant(fs), tape.constant(ft), tape.constant(ft));
  };
  EXPECT_LT(check(d.params(), build, 14), 1e-4);
}

TEST_F(LossGradients, DiscriminatorLossDoesNotReachExtractor) {
  Tp tape;
  auto fs = g.extract(tape, tape.constant(xs), true);
  auto ft = g.extract(tape, tape.constant(xt), true);
  auto l = discriminator_loss(tape, d, fs, fs, ft, ft);
  tape.backward(l);
  for (const auto& name : g.param_names()) {
    if (!name.starts_with("F.")) continue;
    const auto grad = tape.gradient(name);
    for (double v : grad.values()) EXPECT_EQ(v, 0.0) << name;
  }
}

TEST_F(LossGradients, Total) {
  auto build = [&](Tp& tape, const oracle::Params& p, bool grads) {
    GazeModel<double> m(arch, p);
    auto f = m.extract(tape, ad::concat_rows<double>({tape.constant(xs), tape.constant(xt), tape.constant(xs2),
                                                      tape.constant(xt2)}),
                       grads);
    auto y = tape.constant(ys);
    LossTerms<ad::Var<double>> t{gaze_loss(m.head(tape, ad::slice_rows(f, 0, 2), grads), y),
                                 gaze_loss(m.head(tape, ad::slice_rows(f, 4, 6), grads), y),
                                 contrastive_loss(f, 0.5), adversarial_loss(tape, d, ad::slice_rows(f, 2, 4)),
                                 adversarial_loss(tape, d, ad::slice_rows(f, 6, 8))};
    return total_loss(t, LossWeights{});
  };
  EXPECT_LT(check(g.params(), build, 15), 1e-4);
}

TEST(Triplet, Definition) {
  std::vector<double> a{1, 0}, p{1, 0}, n{0, 1};
  EXPECT_NEAR(triplet_loss(a, p, n, 0.0), 0.0, 1e-15);
  EXPECT_NEAR(triplet_loss(a, n, p, 0.0), std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(triplet_loss(a, p, n, 2.0), 2.0 - std::sqrt(2.0), 1e-12);
  std::vector<double> a3{3, 0};
  EXPECT_NEAR(triplet_loss(a3, n, p, 0.0), std::sqrt(2.0), 1e-12);
}

}  // namespace
}  // namespace jitterlab
