#pragma once

// Training objectives: L1 gaze regression, NT-Xent contrastive loss over
// original/augmented pairs, domain-adversarial terms and the weighted total.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "jitterlab/autodiff.hpp"
#include "jitterlab/errors.hpp"
#include "jitterlab/geometry.hpp"
#include "jitterlab/models.hpp"

namespace jitterlab {

struct LossWeights {
  double lambda1 = 1.0;  // contrastive
  double lambda2 = 0.1;  // adversarial
  double tau = 0.5;      // contrastive temperature

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("contrastive temperature tau must be positive");
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// Gaze regression

// Batch mean of |d_pitch| + |d_yaw|, radians. pred and target are [N, 2].
template <class T>
ad::Var<T> gaze_loss(ad::Var<T> pred, ad::Var<T> target) {
  if (pred.shape().size() != 2 || pred.shape()[1] != 2)
    throw ShapeError("gaze_loss: predictions must be [N,2], got " + shape_str(pred.shape()));
  if (pred.shape() != target.shape())
    throw ShapeError("gaze_loss: batch size mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const auto n = pred.shape()[0];
  return ad::scale(ad::l1_norm(ad::sub(pred, target)), T(1) / static_cast<T>(n));
}

inline double gaze_loss(std::span<const GazeLabel> pred, std::span<const GazeLabel> target) {
  if (pred.size() != target.size()) throw ShapeError("gaze_loss: batch size mismatch");
  if (pred.empty()) throw ShapeError("gaze_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    s += std::abs(pred[i].pitch - target[i].pitch) + std::abs(pred[i].yaw - target[i].yaw);
  return s / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Contrastive

inline double cosine_sim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("cosine_sim: dimension mismatch");
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (!(uu > 0.0) || !(vv > 0.0)) throw NumericError("cosine_sim: zero-norm feature vector");
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

// A contrastive batch holds 4B features in block order
//   [x^s (B) | x^t (B) | x'^s (B) | x'^t (B)]
// and every sample's positive partner is its original/augmented twin.
inline std::size_t contrastive_partner(std::size_t i, std::size_t b) {
  if (b == 0 || i >= 4 * b) throw ShapeError("contrastive_partner: index out of range");
  return (i + 2 * b) % (4 * b);
}

// Directed pair loss for anchor u against its partner, on a [4B, d] feature
// table. The denominator runs over every sample except the anchor itself.
inline double contrastive_pair_loss(const Tensor<double>& features, std::size_t u, double tau) {
  if (features.rank() != 2 || features.dim(0) % 4 != 0 || features.dim(0) == 0)
    throw ShapeError("contrastive batch must be [4B, d]");
  const auto n = features.dim(0), d = features.dim(1);
  const auto row = [&](std::size_t i) { return std::span<const double>(features.data() + i * d, d); };
  const auto v = contrastive_partner(u, n / 4);
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (i != u) denom += std::exp(cosine_sim(row(u), row(i)) / tau);
  return -(cosine_sim(row(u), row(v)) / tau - std::log(denom));
}

// Mean over all 4B directed pairs (both directions of every positive pair),
// i.e. (1/4B) * sum_i [l(t_i,t'_i) + l(t'_i,t_i) + l(s_i,s'_i) + l(s'_i,s_i)].
template <class T>
ad::Var<T> contrastive_loss(ad::Var<T> features, T tau) {
  const auto& s = features.shape();
  if (s.size() != 2 || s[0] == 0 || s[0] % 4 != 0)
    throw ShapeError("contrastive_loss: features must be [4B, d], got " + shape_str(s));
  if (!(tau > T(0))) throw ConfigError("contrastive temperature must be positive");
  const std::size_t n = s[0], b = n / 4;
  Tensor<T> off_diag(Shape{n, n}, T(1));
  Tensor<T> positive(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    off_diag[i * n + i] = T(0);
    positive[i * n + contrastive_partner(i, b)] = T(1);
  }
  auto unit = ad::div_rows(features, ad::row_l2norm(features));
  auto logits = ad::scale(ad::matmul_nt(unit, unit), T(1) / tau);
  auto log_denom = ad::log(ad::sum_rows(ad::mul_const(ad::exp(logits), off_diag)));
  auto pos = ad::sum_rows(ad::mul_const(logits, positive));
  return ad::scale(ad::sum(ad::sub(log_denom, pos)), T(1) / static_cast<T>(n));
}

template <class T>
T contrastive_loss(const Tensor<T>& features, T tau) {
  ad::Tape<T> tape;
  return contrastive_loss(tape.constant(features), tau).value().item();
}

// ---------------------------------------------------------------------------
// Domain-adversarial terms

// mean(-log(1 - p_src)) + mean(-log p_tgt) on discriminator outputs.
template <class T>
ad::Var<T> discriminator_loss(ad::Var<T> p_source, ad::Var<T> p_target) {
  auto src = ad::neg(ad::mean(ad::log(ad::add_scalar(ad::neg(p_source), T(1)))));
  auto tgt = ad::neg(ad::mean(ad::log(p_target)));
  return ad::add(src, tgt);
}

// L_dis for the discriminator step. All features are cut from theta_G; the
// source block pools {x^s, x'^s}, the target block pools {x^t, x'^t}.
template <class T>
ad::Var<T> discriminator_loss(ad::Tape<T>& tape, const Discriminator<T>& d, ad::Var<T> f_s, ad::Var<T> f_s_adv,
                              ad::Var<T> f_t, ad::Var<T> f_t_adv) {
  auto src = ad::concat_rows<T>({ad::detach(f_s), ad::detach(f_s_adv)});
  auto tgt = ad::concat_rows<T>({ad::detach(f_t), ad::detach(f_t_adv)});
  return discriminator_loss(d.forward(tape, src, true), d.forward(tape, tgt, true));
}

// mean(-log(1 - D(f))) over one block of target features; theta_D frozen.
template <class T>
ad::Var<T> adversarial_loss(ad::Tape<T>& tape, const Discriminator<T>& d, ad::Var<T> f_target) {
  auto p = d.forward(tape, f_target, false);
  return ad::neg(ad::mean(ad::log(ad::add_scalar(ad::neg(p), T(1)))));
}

// ---------------------------------------------------------------------------
// Total objective for theta_G

template <class V>
struct LossTerms {
  V gaze_source;      // L_gaze(x^s, y^s)
  V gaze_source_adv;  // L_gaze(x'^s, y^s)
  V contrastive;      // L_con
  V adv_target;       // L_adv(x^t)
  V adv_target_adv;   // L_adv(x'^t)
};

inline double total_loss(const LossTerms<double>& t, const LossWeights& w) {
  return t.gaze_source + t.gaze_source_adv + w.lambda1 * t.contrastive +
         w.lambda2 * (t.adv_target + t.adv_target_adv);
}

template <class T>
ad::Var<T> total_loss(const LossTerms<ad::Var<T>>& t, const LossWeights& w) {
  auto l = ad::add(t.gaze_source, t.gaze_source_adv);
  l = ad::add(l, ad::scale(t.contrastive, static_cast<T>(w.lambda1)));
  return ad::add(l, ad::scale(ad::add(t.adv_target, t.adv_target_adv), static_cast<T>(w.lambda2)));
}

// ---------------------------------------------------------------------------
// Triplet probe

namespace detail {

inline std::vector<double> l2_normalized(std::span<const double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 0.0)) throw NumericError("triplet_loss: zero-norm feature vector");
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x /= n;
  return out;
}

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace detail

// max(0, d(a,p) - d(a,n) + margin), Euclidean distance between unit vectors.
inline double triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                           std::span<const double> negative, double margin) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size())
    throw ShapeError("triplet_loss: feature dimensions differ");
  const auto a = detail::l2_normalized(anchor);
  const auto p = detail::l2_normalized(positive);
  const auto n = detail::l2_normalized(negative);
  return std::max(0.0, detail::euclid(a, p) - detail::euclid(a, n) + margin);
}

}  // namespace jitterlab
