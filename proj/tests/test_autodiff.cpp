#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "jitterlab/autodiff.hpp"
#include "support/oracles.hpp"

namespace jitterlab {
namespace {

using Tp = ad::Tape<double>;
using V = ad::Var<double>;
using Fn = std::function<V(Tp&, const std::vector<V>&)>;

Tensor<double> rnd(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = u(eng);
  return t;
}

// Reduces f's output to a scalar with fixed random weights, then compares
// reverse-mode gradients against central differences on every input.
double check_op(const Fn& f, std::vector<Tensor<double>> inputs, std::uint64_t seed = 99) {
  oracle::Params params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.emplace("in" + std::to_string(i), inputs[i]);
  Tensor<double> weights;
  auto eval = [&](const oracle::Params& p, Tp& tape, std::vector<std::string>* names) {
    std::vector<V> vars;
    for (const auto& [name, t] : p) {
      vars.push_back(tape.leaf(t, name, true));
      if (names) names->push_back(name);
    }
    auto out = f(tape, vars);
    if (weights.size() == 0) weights = rnd(out.shape(), seed);
    return ad::sum(ad::mul_const(out, weights));
  };
  auto loss = [&](const oracle::Params& p) {
    Tp tape;
    return eval(p, tape, nullptr).value().item();
  };
  Tp tape;
  std::vector<std::string> names;
  auto l = eval(params, tape, &names);
  const auto grads = tape.backward(l, names);
  return oracle::finite_difference_check(params, {grads.begin(), grads.end()}, loss, 200, seed).max_rel_error;
}

TEST(Autodiff, ElementwiseOps) {
  const Shape s{3, 4};
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::add(v[0], v[1]); }, {rnd(s, 1), rnd(s, 2)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::sub(v[0], v[1]); }, {rnd(s, 1), rnd(s, 2)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::mul(v[0], v[1]); }, {rnd(s, 1), rnd(s, 2)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::exp(v[0]); }, {rnd(s, 3)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::log(v[0]); }, {rnd(s, 4, 0.5, 2.0)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::sqrt(v[0]); }, {rnd(s, 5, 0.5, 2.0)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::tanh(v[0]); }, {rnd(s, 6)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::sigmoid(v[0]); }, {rnd(s, 7, -4, 4)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::leaky_relu(v[0]); }, {rnd(s, 8)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::abs(v[0]); }, {rnd(s, 9)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::scale(ad::add_scalar(ad::neg(v[0]), 2.0), 3.0); }, {rnd(s, 10)}),
            1e-6);
}

TEST(Autodiff, Reductions) {
  const Shape s{5, 3};
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::mean(v[0]); }, {rnd(s, 1)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::sum_rows(v[0]); }, {rnd(s, 2)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::l2_norm(v[0]); }, {rnd(s, 3)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::dot(v[0], v[1]); }, {rnd(s, 4), rnd(s, 5)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::div_rows(v[0], ad::row_l2norm(v[0])); }, {rnd(s, 6)}), 1e-6);
}

TEST(Autodiff, LinearAlgebra) {
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::matmul_nt(v[0], v[1]); }, {rnd({4, 3}, 1), rnd({5, 3}, 2)}),
            1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::affine(v[0], v[1], v[2]); },
                     {rnd({4, 3}, 3), rnd({3, 6}, 4), rnd({6}, 5)}),
            1e-6);
}

TEST(Autodiff, ConvolutionAndPooling) {
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {2, 1}, {1, 1}}) {
    EXPECT_LT(check_op([=](Tp&, auto& v) { return ad::conv2d(v[0], v[1], v[2], stride, pad); },
                       {rnd({2, 2, 7, 7}, 1), rnd({3, 2, 3, 3}, 2), rnd({3}, 3)}),
              1e-6)
        << "stride " << stride << " pad " << pad;
  }
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::avg_pool2d(v[0], 2); }, {rnd({2, 3, 6, 6}, 4)}), 1e-6);
}

TEST(Autodiff, ShapeOps) {
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::concat_rows<double>({v[0], v[1]}); },
                     {rnd({2, 3}, 1), rnd({4, 3}, 2)}),
            1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::slice_rows(v[0], 1, 3); }, {rnd({4, 3}, 3)}), 1e-6);
  EXPECT_LT(check_op([](Tp&, auto& v) { return ad::flatten(ad::reshape(v[0], Shape{2, 2, 3})); }, {rnd({4, 3}, 4)}),
            1e-6);
}

TEST(Autodiff, ConvMatchesDirectLoop) {
  const auto x = rnd({1, 2, 5, 5}, 11), w = rnd({2, 2, 3, 3}, 12), b = rnd({2}, 13);
  Tp tape;
  auto y = ad::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), 2, 1).value();
  ASSERT_EQ(y.shape(), (Shape{1, 2, 3, 3}));
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double acc = b[o];
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t ki = 0; ki < 3; ++ki)
            for (std::size_t kj = 0; kj < 3; ++kj) {
              const long r = static_cast<long>(2 * i + ki) - 1, q = static_cast<long>(2 * j + kj) - 1;
              if (r < 0 || q < 0 || r >= 5 || q >= 5) continue;
              acc += x[(c * 5 + r) * 5 + q] * w[((o * 2 + c) * 3 + ki) * 3 + kj];
            }
        EXPECT_NEAR(y[(o * 3 + i) * 3 + j], acc, 1e-12);
      }
}

TEST(Autodiff, DetachBlocksGradient) {
  Tp tape;
  auto a = tape.leaf(rnd({3}, 1), "a");
  auto loss = ad::add(ad::sum(ad::mul(a, a)), ad::sum(ad::detach(ad::mul(a, a))));
  tape.backward(loss);
  const auto g = tape.gradient("a");
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], 2 * a.value()[i], 1e-12);
}

TEST(Autodiff, ReusedNodeAccumulates) {
  Tp tape;
  auto a = tape.leaf(Tensor<double>::scalar(3.0), "a");
  auto loss = ad::add(ad::mul(a, a), a);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.gradient("a")[0], 7.0);
}

TEST(Autodiff, StructuredErrors) {
  Tp tape;
  auto a = tape.leaf(rnd({2, 3}, 1), "a");
  EXPECT_THROW(tape.leaf(rnd({1}, 2), "a"), Error);
  EXPECT_THROW(tape.backward(a), ShapeError);
  EXPECT_THROW(tape.gradient("missing"), Error);
  EXPECT_THROW(ad::add(a, tape.constant(rnd({3, 2}, 3))), ShapeError);
  EXPECT_THROW(ad::log(tape.constant(Tensor<double>(Shape{2}, -1.0))), NumericError);
  EXPECT_THROW(tape.leaf(Tensor<double>(Shape{1}, std::nan("")), "nan"), NumericError);
}

TEST(Autodiff, SigmoidIsClampedAndStrictlyInside) {
  Tp tape;
  auto p = ad::sigmoid(tape.constant(Tensor<double>(Shape{2}, std::vector<double>{1e4, -1e4}))).value();
  EXPECT_GT(p[0], 0.0);
  EXPECT_LT(p[0], 1.0);
  EXPECT_GT(p[1], 0.0);
  EXPECT_NEAR(p[1], 1.0 / (1.0 + std::exp(30.0)), 1e-20);
}

}  // namespace
}  // namespace jitterlab
