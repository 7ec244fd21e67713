#pragma once

// Adversarial high-frequency injection: FGSM, L-inf PGD and the per-image
// 50/50 mix of the two used for augmentation.

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "jitterlab/autodiff.hpp"
#include "jitterlab/errors.hpp"
#include "jitterlab/geometry.hpp"
#include "jitterlab/image.hpp"
#include "jitterlab/losses.hpp"
#include "jitterlab/models.hpp"
#include "jitterlab/rng.hpp"

namespace jitterlab {

struct AttackConfig {
  double epsilon = 0.1;
  int pgd_steps = 4;
  double pgd_step_size = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("attack epsilon must be non-negative");
    if (pgd_steps < 1) throw ConfigError("pgd_steps must be at least 1");
    if (epsilon > 0.0 && !(pgd_step_size > 0.0 && pgd_step_size <= epsilon))
      throw ConfigError("pgd_step_size must lie in (0, epsilon]");
  }
};

template <class M>
concept GazePredictor = requires(const M& m, ad::Tape<typename M::scalar_type>& tape,
                                 ad::Var<typename M::scalar_type> x) {
  { m.predict(tape, x, false) } -> std::same_as<ad::Var<typename M::scalar_type>>;
};

// sign(d L1(G(x), y) / dx) per image; sign(0) = 0.
template <GazePredictor M>
std::vector<Image> loss_gradient_sign(const M& model, std::span<const Image> images,
                                      std::span<const GazeLabel> labels) {
  using T = typename M::scalar_type;
  if (images.size() != labels.size()) throw ShapeError("attack: images and labels differ in count");
  ad::Tape<T> tape;
  auto x = tape.leaf(to_batch<T>(images), "input", true);
  auto y = tape.constant(to_label_tensor<T>(labels));
  // Summed loss: each image's gradient is independent of the batch size.
  auto loss = ad::l1_norm(ad::sub(model.predict(tape, x, false), y));
  tape.backward(loss);
  const auto& g = tape.grad_of(x.id);
  std::vector<Image> out;
  out.reserve(images.size());
  const auto px = images.empty() ? 0 : images[0].size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    Image s(images[i].width(), images[i].height());
    if (g.size()) {
      for (std::size_t j = 0; j < px; ++j) {
        const T v = g[i * px + j];
        s[j] = v > T(0) ? 1.0 : (v < T(0) ? -1.0 : 0.0);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// x' = clamp01(x + eps * sign(grad))
template <GazePredictor M>
std::vector<Image> fgsm(const M& model, std::span<const Image> images, std::span<const GazeLabel> labels,
                        const AttackConfig& cfg) {
  cfg.validate();
  std::vector<Image> out(images.begin(), images.end());
  if (cfg.epsilon == 0.0 || images.empty()) return out;
  const auto signs = loss_gradient_sign(model, images, labels);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] += cfg.epsilon * signs[i][j];
    out[i].clamp01();
  }
  return out;
}

// Iterated sign steps at the current iterate, each followed by projection
// onto the eps L-inf ball around the original intersected with [0, 1].
template <GazePredictor M>
std::vector<Image> pgd(const M& model, std::span<const Image> images, std::span<const GazeLabel> labels,
                       const AttackConfig& cfg) {
  cfg.validate();
  std::vector<Image> cur(images.begin(), images.end());
  if (cfg.epsilon == 0.0 || images.empty()) return cur;
  for (int step = 0; step < cfg.pgd_steps; ++step) {
    const auto signs = loss_gradient_sign(model, std::span<const Image>(cur), labels);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      for (std::size_t j = 0; j < cur[i].size(); ++j) {
        const double lo = std::max(0.0, images[i][j] - cfg.epsilon);
        const double hi = std::min(1.0, images[i][j] + cfg.epsilon);
        cur[i][j] = std::clamp(cur[i][j] + cfg.pgd_step_size * signs[i][j], lo, hi);
      }
    }
  }
  return cur;
}

template <GazePredictor M>
Image fgsm(const M& model, const Image& x, const GazeLabel& y, const AttackConfig& cfg) {
  return fgsm(model, std::span<const Image>(&x, 1), std::span<const GazeLabel>(&y, 1), cfg)[0];
}

template <GazePredictor M>
Image pgd(const M& model, const Image& x, const GazeLabel& y, const AttackConfig& cfg) {
  return pgd(model, std::span<const Image>(&x, 1), std::span<const GazeLabel>(&y, 1), cfg)[0];
}

// Fair coin per image: true selects FGSM, false PGD.
inline std::vector<bool> attack_coins(std::size_t n, std::uint64_t coin_seed) {
  auto eng = make_engine(coin_seed);
  std::vector<bool> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = uniform01(eng) < 0.5;
  return c;
}

struct AugmentResult {
  std::vector<Image> images;
  std::vector<bool> used_fgsm;
};

// Labels are ground truth for source images and frozen pseudo-labels for
// target images. Output is aligned index-wise with the input.
template <GazePredictor M>
AugmentResult augment_batch(const M& model, std::span<const Image> images, std::span<const GazeLabel> labels,
                            const AttackConfig& cfg, std::uint64_t coin_seed) {
  cfg.validate();
  if (images.size() != labels.size()) throw ShapeError("augment_batch: images and labels differ in count");
  AugmentResult r{std::vector<Image>(images.begin(), images.end()), attack_coins(images.size(), coin_seed)};
  if (cfg.epsilon == 0.0 || images.empty()) return r;
  for (const bool use_fgsm : {true, false}) {
    std::vector<Image> xs;
    std::vector<GazeLabel> ys;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < images.size(); ++i)
      if (r.used_fgsm[i] == use_fgsm) {
        xs.push_back(images[i]);
        ys.push_back(labels[i]);
        idx.push_back(i);
      }
    if (idx.empty()) continue;
    auto adv = use_fgsm ? fgsm(model, xs, ys, cfg) : pgd(model, xs, ys, cfg);
    for (std::size_t k = 0; k < idx.size(); ++k) r.images[idx[k]] = std::move(adv[k]);
  }
  return r;
}

}  // namespace jitterlab
