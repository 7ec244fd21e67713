#pragma once

// Supervised source pretraining and the unsupervised adaptation loop:
// adversarial HFC augmentation + contrastive consistency + domain-adversarial
// alignment, alternating generator and discriminator updates.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jitterlab/attacks.hpp"
#include "jitterlab/autodiff.hpp"
#include "jitterlab/dataset.hpp"
#include "jitterlab/errors.hpp"
#include "jitterlab/imageops.hpp"
#include "jitterlab/losses.hpp"
#include "jitterlab/metrics.hpp"
#include "jitterlab/models.hpp"
#include "jitterlab/optim.hpp"
#include "jitterlab/rng.hpp"

namespace jitterlab {

namespace seeds {
inline constexpr std::uint64_t kInit = 0x1417;
inline constexpr std::uint64_t kShuffle = 0x5f1e;
inline constexpr std::uint64_t kDisc = 0xd15c;
inline constexpr std::uint64_t kSampling = 0x5a3b;
inline constexpr std::uint64_t kCoins = 0xc017;
}  // namespace seeds

// Fisher-Yates with the library's own uniform draw.
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& eng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = std::min(static_cast<std::size_t>(uniform01(eng) * static_cast<double>(i)), i - 1);
    std::swap(idx[i - 1], idx[j]);
  }
}

template <class T>
std::vector<T> gather(std::span<const T> src, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(src[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainConfig {
  std::size_t epochs = 10;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  GazeModel<float> model;
  std::vector<double> loss_trace;  // one value per optimizer step
};

inline PretrainResult pretrain(const Dataset& source, const PretrainConfig& cfg, const Architecture& arch = {}) {
  if (source.empty()) throw ConfigError("pretrain: empty dataset");
  if (cfg.batch == 0 || cfg.epochs == 0) throw ConfigError("pretrain: batch and epochs must be positive");
  PretrainResult r{GazeModel<float>(arch, derive_seed(cfg.seed, seeds::kInit)), {}};
  Adam<float> opt({cfg.lr, 0.9, 0.999, 1e-8});
  auto eng = make_engine(derive_seed(cfg.seed, seeds::kShuffle));
  std::vector<std::size_t> order(source.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto names = r.model.param_names();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, eng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch, order.size() - start));
      const auto xs = gather<Image>(source.images, idx);
      const auto ys = gather<GazeLabel>(source.labels, idx);
      ad::Tape<float> tape;
      auto x = tape.constant(to_batch<float>(xs));
      auto y = tape.constant(to_label_tensor<float>(ys));
      auto loss = gaze_loss(r.model.predict(tape, x), y);
      auto grads = tape.backward(loss, names);
      opt.step(r.model.params(), grads);
      r.loss_trace.push_back(loss.value().item());
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Adaptation

struct AdaptConfig {
  std::size_t iters = 500;
  std::size_t batch = 16;
  LossWeights weights;
  AttackConfig attack;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  std::uint64_t seed = 0;
  bool check_invariants = true;

  void validate(std::size_t n_source, std::size_t n_target) const {
    weights.validate();
    attack.validate();
    if (batch < 1 || iters < 1) throw ConfigError("adapt: batch and iters must be at least 1");
    if (n_source < batch || n_target < batch) throw ConfigError("adapt: each domain needs at least `batch` samples");
  }
};

struct TraceRecord {
  double gaze = 0;        // L_gaze(x^s) + L_gaze(x'^s)
  double contrastive = 0;
  double adversarial = 0; // L_adv(x^t) + L_adv(x'^t)
  double discriminator = 0;
  double total = 0;
  double d_confidence = 0;  // mean |D(F(x)) - 0.5| over the batch, before the D step
};

struct AdaptResult {
  GazeModel<float> model;
  Discriminator<float> discriminator;
  std::vector<TraceRecord> trace;
  std::vector<GazeLabel> pseudo_labels;
};

// Assembles [x^s | x^t | x'^s | x'^t] into one input batch.
inline std::vector<Image> four_blocks(const std::vector<Image>& xs, const std::vector<Image>& xt,
                                      const std::vector<Image>& adv) {
  std::vector<Image> all;
  all.reserve(2 * adv.size());
  all.insert(all.end(), xs.begin(), xs.end());
  all.insert(all.end(), xt.begin(), xt.end());
  all.insert(all.end(), adv.begin(), adv.end());
  return all;
}

inline std::uint64_t hash_labels(const std::vector<GazeLabel>& v) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& l : v)
    for (double d : {l.pitch, l.yaw}) {
      const auto b = std::bit_cast<std::uint64_t>(d);
      for (int i = 0; i < 8; ++i) {
        h ^= (b >> (8 * i)) & 0xff;
        h *= 1099511628211ULL;
      }
    }
  return h;
}

inline AdaptResult adapt(const GazeModel<float>& pretrained, const Dataset& source, const Dataset& target,
                         const AdaptConfig& cfg) {
  cfg.validate(source.size(), target.size());
  const auto B = cfg.batch;
  AdaptResult r{pretrained, Discriminator<float>(pretrained.arch(), derive_seed(cfg.seed, seeds::kDisc)), {}, {}};
  // Pseudo-labels from the initial model, frozen for the whole run.
  r.pseudo_labels = pretrained.predict_all(target.images);
  const auto pseudo_hash = hash_labels(r.pseudo_labels);

  Adam<float> opt_g({cfg.lr_g, 0.9, 0.999, 1e-8});
  Adam<float> opt_d({cfg.lr_d, 0.9, 0.999, 1e-8});
  auto eng = make_engine(derive_seed(cfg.seed, seeds::kSampling));
  const auto g_names = r.model.param_names();
  std::vector<std::string> d_names;
  for (const auto& kv : r.discriminator.params()) d_names.push_back(kv.first);
  const auto ys_span = std::span<const GazeLabel>(source.labels);

  for (std::size_t it = 0; it < cfg.iters; ++it) {
    try {
      std::vector<std::size_t> si(B), ti(B);
      for (auto& i : si) i = std::min(static_cast<std::size_t>(uniform01(eng) * source.size()), source.size() - 1);
      for (auto& i : ti) i = std::min(static_cast<std::size_t>(uniform01(eng) * target.size()), target.size() - 1);
      const auto xs = gather<Image>(source.images, si);
      const auto ys = gather<GazeLabel>(ys_span, si);
      const auto xt = gather<Image>(target.images, ti);
      const auto yt = gather<GazeLabel>(r.pseudo_labels, ti);

      // Augmentation against the current model; outputs are plain data.
      std::vector<Image> clean = xs;
      clean.insert(clean.end(), xt.begin(), xt.end());
      std::vector<GazeLabel> labels = ys;
      labels.insert(labels.end(), yt.begin(), yt.end());
      const auto aug = augment_batch(r.model, clean, labels, cfg.attack, derive_seed(cfg.seed ^ it, seeds::kCoins));
      const auto batch = to_batch<float>(four_blocks(xs, xt, aug.images));

      TraceRecord rec;
      // theta_G step on L = L_gaze(x^s) + L_gaze(x'^s) + l1 L_con + l2 (L_adv(x^t) + L_adv(x'^t))
      {
        const auto d_hash = cfg.check_invariants ? hash_params(r.discriminator.params()) : 0;
        ad::Tape<float> tape;
        auto f = r.model.extract(tape, tape.constant(batch));
        auto pred = r.model.head(tape, f);
        auto y = tape.constant(to_label_tensor<float>(ys));
        LossTerms<ad::Var<float>> terms{
            gaze_loss(ad::slice_rows(pred, 0, B), y),
            gaze_loss(ad::slice_rows(pred, 2 * B, 3 * B), y),
            contrastive_loss(f, static_cast<float>(cfg.weights.tau)),
            adversarial_loss(tape, r.discriminator, ad::slice_rows(f, B, 2 * B)),
            adversarial_loss(tape, r.discriminator, ad::slice_rows(f, 3 * B, 4 * B)),
        };
        auto total = total_loss(terms, cfg.weights);
        auto grads = tape.backward(total, g_names);
        opt_g.step(r.model.params(), grads);
        rec.gaze = terms.gaze_source.value().item() + terms.gaze_source_adv.value().item();
        rec.contrastive = terms.contrastive.value().item();
        rec.adversarial = terms.adv_target.value().item() + terms.adv_target_adv.value().item();
        rec.total = total.value().item();
        if (cfg.check_invariants && hash_params(r.discriminator.params()) != d_hash)
          throw Error("theta_D changed during the theta_G step");
      }
      // theta_D step on recomputed features.
      {
        const auto g_hash = cfg.check_invariants ? hash_params(r.model.params()) : 0;
        ad::Tape<float> tape;
        auto f = tape.constant(r.model.features(four_blocks(xs, xt, aug.images)));
        auto dis = discriminator_loss(tape, r.discriminator, ad::slice_rows(f, 0, B), ad::slice_rows(f, 2 * B, 3 * B),
                                      ad::slice_rows(f, B, 2 * B), ad::slice_rows(f, 3 * B, 4 * B));
        double conf = 0.0;
        for (double p : r.discriminator.discriminate(f.value())) conf += std::abs(p - 0.5);
        rec.d_confidence = conf / static_cast<double>(4 * B);
        auto grads = tape.backward(dis, d_names);
        opt_d.step(r.discriminator.params(), grads);
        rec.discriminator = dis.value().item();
        if (cfg.check_invariants && hash_params(r.model.params()) != g_hash)
          throw Error("theta_G changed during the theta_D step");
      }
      if (cfg.check_invariants && hash_labels(r.pseudo_labels) != pseudo_hash)
        throw Error("pseudo-labels changed during adaptation");
      for (double v : {rec.gaze, rec.contrastive, rec.adversarial, rec.discriminator, rec.total})
        if (!std::isfinite(v)) throw NumericError("non-finite loss value");
      r.trace.push_back(rec);
    } catch (const NumericError& e) {
      throw NumericError("adaptation iteration " + std::to_string(it + 1) + ": " + e.what());
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  std::size_t samples = 0;
  double mean_angular_error_deg = 0.0;
  std::optional<MavReport> mav;
  std::string mav_unavailable_reason;
};

// Predictions are taken on `inputs` (possibly perturbed copies of the
// dataset images); mav pairs are gated on the dataset's own images/labels.
inline EvalReport evaluate_predictions(std::span<const GazeLabel> preds, std::span<const GazeLabel> labels,
                                       const MavPairs& pairs, const MavConfig& cfg) {
  EvalReport r;
  r.samples = preds.size();
  r.mean_angular_error_deg = mean_angular_error(preds, labels);
  try {
    r.mav = mav_from_pairs(pairs, preds, cfg);
  } catch (const NoQualifyingPairs& e) {
    r.mav_unavailable_reason = e.what();
  }
  return r;
}

template <class Model>
EvalReport evaluate(const Model& model, const Dataset& ds, const MavConfig& cfg, const MavPairs* pairs = nullptr,
                    std::span<const Image> inputs = {}) {
  if (ds.empty()) throw ConfigError("evaluate: empty dataset");
  std::optional<MavPairs> own;
  if (!pairs) {
    own = qualifying_pairs(ds.images, ds.labels, cfg);
    pairs = &*own;
  }
  const auto preds = model.predict_all(inputs.empty() ? std::span<const Image>(ds.images) : inputs);
  return evaluate_predictions(preds, ds.labels, *pairs, cfg);
}

// Copies of the dataset images with seeded per-image noise (seed ^ index).
inline std::vector<Image> noisy_images(const Dataset& ds, const NoiseSetting& noise, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(apply_noise(ds.images[i], noise, item_seed(seed, i)));
  return out;
}

inline std::vector<Image> lowpass_images(const Dataset& ds, double fraction) {
  std::vector<Image> out;
  out.reserve(ds.size());
  for (const auto& img : ds.images) out.push_back(fourier_lowpass(img, fraction));
  return out;
}

}  // namespace jitterlab
