#pragma once

// Deterministic synthetic two-domain eye images with exact gaze labels.
// The target domain differs from the source mainly by an additive diagonal
// sinusoidal grating (a controlled high-frequency component).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "jitterlab/dataset.hpp"
#include "jitterlab/errors.hpp"
#include "jitterlab/geometry.hpp"
#include "jitterlab/image.hpp"
#include "jitterlab/imageops.hpp"
#include "jitterlab/rng.hpp"

namespace jitterlab {

struct SceneParams {
  GazeLabel gaze;
  double iris_radius = 4.5;  // pixels
  double eye_cx = 16.0;      // pixels, continuous coordinates (pixel centres at i + 0.5)
  double eye_cy = 16.0;
  double background = 0.55;
  double eyelid_openness = 0.9;
  double grating_phase = 0.0;  // radians
  std::uint64_t seed = 0;      // sensor-noise stream
};

struct DomainSpec {
  Domain domain = Domain::source;
  double hfc_amplitude = 0.0;
  double hfc_frequency = 12.0;  // cycles per image width along x + y
  double brightness_shift = 0.0;
  double contrast_scale = 1.0;
  double sensor_noise_variance = 1e-4;

  void validate() const {
    if (domain == Domain::source && hfc_amplitude != 0.0)
      throw ConfigError("source domain must have zero HFC amplitude");
    if (!(hfc_amplitude >= 0.0) || !(sensor_noise_variance >= 0.0) || !(contrast_scale > 0.0))
      throw ConfigError("domain spec values out of range");
  }

  static DomainSpec source() { return {}; }
  static DomainSpec target() {
    DomainSpec d;
    d.domain = Domain::target;
    d.hfc_amplitude = 0.2;
    d.hfc_frequency = 15.0;
    d.brightness_shift = 0.04;
    d.contrast_scale = 0.9;
    return d;
  }
};

struct RenderConfig {
  std::size_t image_size = 32;
  double gain_px_per_rad = 20.0;
  double eye_semi_x = 15.0;  // eye ellipse semi-axes at 32 px, scaled with size
  double eye_semi_y = 11.0;
  double sclera = 0.88;
  double iris = 0.25;
  double pupil = 0.06;
  double pupil_ratio = 0.45;
  int supersample = 4;
  double psf_sigma_px = 0.6;  // Gaussian reconstruction filter at 32 px
  double pitch_range_deg = 20.0;
  double yaw_range_deg = 30.0;
};

inline void check_scene(const SceneParams& p, const RenderConfig& rc) {
  require_in_range(p.gaze);
  const double s = static_cast<double>(rc.image_size) / 32.0;
  const double ix = p.gaze.yaw * rc.gain_px_per_rad * s, iy = p.gaze.pitch * rc.gain_px_per_rad * s;
  const double ax = rc.eye_semi_x * s, ay = rc.eye_semi_y * s;
  if ((ix * ix) / (ax * ax) + (iy * iy) / (ay * ay) >= 1.0)
    throw DomainError("iris centre leaves the eye ellipse for this gaze");
  if (!(p.eyelid_openness > 0.0 && p.eyelid_openness <= 1.0)) throw DomainError("eyelid openness must be in (0, 1]");
  if (!(p.iris_radius > 0.0)) throw DomainError("iris radius must be positive");
}

// Clean appearance, before any domain transform.
inline Image render_clean(const SceneParams& p, const RenderConfig& rc = {}) {
  check_scene(p, rc);
  const auto n = rc.image_size;
  const double s = static_cast<double>(n) / 32.0;
  const double ax = rc.eye_semi_x * s, ay = rc.eye_semi_y * s * p.eyelid_openness;
  const double icx = p.eye_cx * s + rc.gain_px_per_rad * s * p.gaze.yaw;
  const double icy = p.eye_cy * s + rc.gain_px_per_rad * s * p.gaze.pitch;
  const double r_iris = p.iris_radius * s, r_pupil = r_iris * rc.pupil_ratio;
  const int ss = rc.supersample;
  const double inv = 1.0 / (ss * ss);
  Image img(n, n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / ss;
          const double py = static_cast<double>(y) + (sy + 0.5) / ss;
          const double ex = (px - p.eye_cx * s) / ax, ey = (py - p.eye_cy * s) / ay;
          if (ex * ex + ey * ey >= 1.0) {
            acc += p.background;
            continue;
          }
          const double d2 = (px - icx) * (px - icx) + (py - icy) * (py - icy);
          if (d2 < r_pupil * r_pupil)
            acc += rc.pupil;
          else if (d2 < r_iris * r_iris)
            acc += rc.iris;
          else
            acc += rc.sclera;
        }
      }
      img.at(x, y) = acc * inv;
    }
  }
  return gaussian_blur(img, rc.psf_sigma_px * s);
}

// Contrast/brightness, grating a*sin(2*pi*f*(x+y)/W + phase), sensor noise,
// clamp to [0, 1].
inline Image apply_domain(const Image& clean, const SceneParams& p, const DomainSpec& d) {
  d.validate();
  Image out = clean;
  const auto w = static_cast<double>(clean.width());
  for (std::size_t y = 0; y < clean.height(); ++y) {
    for (std::size_t x = 0; x < clean.width(); ++x) {
      double v = d.contrast_scale * (out.at(x, y) - 0.5) + 0.5 + d.brightness_shift;
      if (d.hfc_amplitude > 0.0)
        v += d.hfc_amplitude *
             std::sin(2.0 * kPi * d.hfc_frequency * static_cast<double>(x + y) / w + p.grating_phase);
      out.at(x, y) = v;
    }
  }
  if (d.sensor_noise_variance > 0.0) {
    auto eng = make_engine(p.seed);
    std::normal_distribution<double> noise(0.0, std::sqrt(d.sensor_noise_variance));
    for (auto& v : out.pixels()) v += noise(eng);
  }
  out.clamp01();
  return out;
}

inline Image render_eye(const SceneParams& p, const DomainSpec& d, const RenderConfig& rc = {}) {
  return apply_domain(render_clean(p, rc), p, d);
}

// Round to the 8-bit grid used for storage.
inline Image quantize8(Image img) {
  for (auto& v : img.pixels()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return img;
}

// Value as it reads back from a 9-significant-digit manifest field.
inline double quantize_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

struct GroupCheck {
  double max_label_angle_deg = 0.0;
  double min_ssim = 1.0;
};

// Worst-case label angle and SSIM over all within-group pairs.
inline GroupCheck check_groups(const Dataset& ds) {
  GroupCheck c;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.group_ids[i] == kNoGroup) continue;
    for (std::size_t j = i + 1; j < ds.size(); ++j) {
      if (ds.group_ids[j] != ds.group_ids[i]) continue;
      c.max_label_angle_deg = std::max(c.max_label_angle_deg, angular_between(ds.labels[i], ds.labels[j]));
      c.min_ssim = std::min(c.min_ssim, ssim(ds.images[i], ds.images[j]));
    }
  }
  return c;
}

struct GenerateOptions {
  RenderConfig render;
  double group_gaze_jitter_deg = 0.3;    // per-axis, uniform
  double group_center_jitter_px = 0.1;
  double group_phase_jitter = 0.35;      // radians
  double phase_spread = 2.0 * kPi;       // width of the per-image grating phase distribution
  double iris_radius_min = 4.0, iris_radius_max = 5.0;
  double background_min = 0.45, background_max = 0.65;
  double eyelid_min = 0.8;
  double group_min_ssim = 0.75;
  double group_max_angle_deg = 1.0;
};

// dup_groups groups of three near-duplicates come first (group ids
// 0..dup_groups-1), followed by independent samples. Images live on the
// 8-bit grid and labels on the 9-digit grid so that storage is lossless.
inline Dataset generate_dataset(std::size_t n, const DomainSpec& domain, std::size_t dup_groups, std::uint64_t seed,
                                const GenerateOptions& opt = {}) {
  domain.validate();
  if (n == 0) throw ConfigError("dataset size must be positive");
  if (n < 3 * dup_groups) throw ConfigError("n must be at least 3 * dup_groups");
  const auto& rc = opt.render;
  auto eng = make_engine(derive_seed(seed, 0x5ce7e));
  const double pr = deg_to_rad(rc.pitch_range_deg), yr = deg_to_rad(rc.yaw_range_deg);

  auto random_scene = [&](std::uint64_t img_seed) {
    SceneParams p;
    p.gaze = {uniform(eng, -pr, pr), uniform(eng, -yr, yr)};
    p.iris_radius = uniform(eng, opt.iris_radius_min, opt.iris_radius_max);
    p.eye_cx = 16.0 + uniform(eng, -0.5, 0.5);
    p.eye_cy = 16.0 + uniform(eng, -0.5, 0.5);
    p.background = uniform(eng, opt.background_min, opt.background_max);
    p.eyelid_openness = uniform(eng, opt.eyelid_min, 1.0);
    p.grating_phase = uniform(eng, -0.5 * opt.phase_spread, 0.5 * opt.phase_spread);
    p.seed = img_seed;
    return p;
  };
  auto emit = [&](Dataset& ds, SceneParams p, std::int64_t group) {
    p.gaze = {quantize_label(p.gaze.pitch), quantize_label(p.gaze.yaw)};
    ds.push_back(quantize8(render_eye(p, domain, rc)), p.gaze, domain.domain, group, p.seed);
  };

  Dataset ds;
  std::uint64_t index = 0;
  for (std::size_t g = 0; g < dup_groups; ++g) {
    const auto base = random_scene(0);
    const double jit = deg_to_rad(opt.group_gaze_jitter_deg);
    for (int k = 0; k < 3; ++k) {
      SceneParams p = base;
      p.gaze.pitch = std::clamp(base.gaze.pitch + uniform(eng, -jit, jit), -pr, pr);
      p.gaze.yaw = std::clamp(base.gaze.yaw + uniform(eng, -jit, jit), -yr, yr);
      p.eye_cx += uniform(eng, -opt.group_center_jitter_px, opt.group_center_jitter_px);
      p.eye_cy += uniform(eng, -opt.group_center_jitter_px, opt.group_center_jitter_px);
      p.grating_phase += uniform(eng, -opt.group_phase_jitter, opt.group_phase_jitter);
      p.seed = item_seed(seed, index++);
      emit(ds, p, static_cast<std::int64_t>(g));
    }
  }
  while (ds.size() < n) emit(ds, random_scene(item_seed(seed, index++)), kNoGroup);

  if (dup_groups > 0) {
    const auto c = check_groups(ds);
    if (!(c.max_label_angle_deg < opt.group_max_angle_deg) || !(c.min_ssim > opt.group_min_ssim)) {
      std::ostringstream os;
      os << "duplicate-group self-check failed: max label angle " << c.max_label_angle_deg << " deg, min SSIM "
         << c.min_ssim;
      throw Error(os.str());
    }
  }
  return ds;
}

}  // namespace jitterlab
