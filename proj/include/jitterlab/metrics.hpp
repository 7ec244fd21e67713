#pragma once

// Evaluation metrics: mean angular error, the mav jitter metric over
// appearance- and label-similar pairs, and the triplet consistency probe.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "jitterlab/errors.hpp"
#include "jitterlab/geometry.hpp"
#include "jitterlab/image.hpp"
#include "jitterlab/imageops.hpp"
#include "jitterlab/losses.hpp"
#include "jitterlab/rng.hpp"
#include "jitterlab/tensor.hpp"

namespace jitterlab {

// Compensated running sum.
class KahanSum {
 public:
  void add(double v) {
    const double y = v - c_;
    const double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double value() const { return s_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

inline double mean_angular_error(std::span<const GazeLabel> preds, std::span<const GazeLabel> labels) {
  if (preds.size() != labels.size()) throw ShapeError("mean_angular_error: length mismatch");
  if (preds.empty()) throw ShapeError("mean_angular_error: empty input");
  KahanSum s;
  for (std::size_t i = 0; i < preds.size(); ++i)
    s.add(angular_between(direction_of(preds[i]), direction_of(labels[i])));
  return s.value() / static_cast<double>(preds.size());
}

struct MavConfig {
  double alpha = 0.75;         // SSIM must exceed this
  double beta_deg = 1.0;       // label angle must be below this
  std::size_t max_pairs = 0;   // 0 = use every qualifying pair
  std::uint64_t seed = 0;      // subsampling seed

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("mav alpha must lie in (0, 1)");
    if (!(beta_deg > 0.0)) throw ConfigError("mav beta must be positive");
  }
};

struct MavPair {
  std::size_t i;
  std::size_t j;
  double label_angle_deg;
};

struct MavPairs {
  std::vector<MavPair> pairs;
  std::size_t candidates_scanned = 0;
};

struct MavReport {
  double mav_deg = 0.0;
  std::size_t qualifying_pairs = 0;
  std::size_t candidates_scanned = 0;
};

// Unordered pairs (i < j) with label angle < beta (ground truth only) and
// SSIM > alpha. The angle gate runs first; SSIM only for survivors.
inline MavPairs qualifying_pairs(std::span<const Image> images, std::span<const GazeLabel> labels,
                                 const MavConfig& cfg) {
  cfg.validate();
  if (images.size() != labels.size()) throw ShapeError("mav: images and labels differ in count");
  std::vector<GazeVector> dirs;
  dirs.reserve(labels.size());
  for (const auto& l : labels) dirs.push_back(direction_of(l));
  MavPairs out;
  const auto n = images.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      ++out.candidates_scanned;
      const double ang = angular_between(dirs[i], dirs[j]);
      if (!(ang < cfg.beta_deg)) continue;
      if (!(ssim(images[i], images[j]) > cfg.alpha)) continue;
      out.pairs.push_back({i, j, ang});
    }
  }
  return out;
}

// mav over a precomputed pair set; predictions indexed like the images the
// pairs were selected on.
inline MavReport mav_from_pairs(const MavPairs& pairs, std::span<const GazeLabel> preds, const MavConfig& cfg) {
  if (pairs.pairs.empty()) throw NoQualifyingPairs();
  std::vector<std::size_t> chosen(pairs.pairs.size());
  for (std::size_t k = 0; k < chosen.size(); ++k) chosen[k] = k;
  if (cfg.max_pairs > 0 && chosen.size() > cfg.max_pairs) {
    // partial Fisher-Yates: uniform subset without replacement
    auto eng = make_engine(cfg.seed);
    for (std::size_t k = 0; k < cfg.max_pairs; ++k) {
      const auto r = k + static_cast<std::size_t>(uniform01(eng) * static_cast<double>(chosen.size() - k));
      std::swap(chosen[k], chosen[std::min(r, chosen.size() - 1)]);
    }
    chosen.resize(cfg.max_pairs);
    std::sort(chosen.begin(), chosen.end());
  }
  KahanSum s;
  for (auto k : chosen) {
    const auto& p = pairs.pairs[k];
    if (p.i >= preds.size() || p.j >= preds.size()) throw ShapeError("mav: predictions do not cover the pair set");
    const double pred_angle = angular_between(direction_of(preds[p.i]), direction_of(preds[p.j]));
    s.add(std::abs(pred_angle - p.label_angle_deg));
  }
  return {s.value() / static_cast<double>(chosen.size()), chosen.size(), pairs.candidates_scanned};
}

inline MavReport mav(std::span<const Image> images, std::span<const GazeLabel> labels,
                     std::span<const GazeLabel> preds, const MavConfig& cfg) {
  if (preds.size() != images.size()) throw ShapeError("mav: predictions not aligned with dataset");
  return mav_from_pairs(qualifying_pairs(images, labels, cfg), preds, cfg);
}

// Mean triplet loss with anchor = original feature i, positive = its
// adversarial twin, negative = original feature of a uniformly drawn j != i.
// Anchors cycle through the set in order.
template <class T>
double triplet_probe(const Tensor<T>& original, const Tensor<T>& adversarial, double margin, std::size_t n_triples,
                     std::uint64_t seed) {
  if (original.shape() != adversarial.shape() || original.rank() != 2)
    throw ShapeError("triplet_probe: feature tables must be [N, d] and equal in shape");
  const auto n = original.dim(0), d = original.dim(1);
  if (n < 2) throw ShapeError("triplet_probe: need at least two samples");
  if (n_triples == 0) throw ConfigError("triplet_probe: n_triples must be positive");
  auto row = [d](const Tensor<T>& t, std::size_t i) {
    return std::vector<double>(t.data() + i * d, t.data() + (i + 1) * d);
  };
  auto eng = make_engine(seed);
  KahanSum s;
  for (std::size_t k = 0; k < n_triples; ++k) {
    const auto i = k % n;
    auto j = static_cast<std::size_t>(uniform01(eng) * static_cast<double>(n - 1));
    j = std::min(j, n - 2);
    if (j >= i) ++j;
    s.add(triplet_loss(row(original, i), row(adversarial, i), row(original, j), margin));
  }
  return s.value() / static_cast<double>(n_triples);
}

}  // namespace jitterlab
