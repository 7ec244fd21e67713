#pragma once

// Image similarity, frequency-domain filtering and additive noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <cstdint>
#include <random>
#include <vector>

#include "jitterlab/errors.hpp"
#include "jitterlab/image.hpp"
#include "jitterlab/rng.hpp"

namespace jitterlab {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x - c, dy = y - c;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w[y * size + x] = v;
      total += v;
    }
  }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace detail

// Mean SSIM over all window positions fully inside the image (the
// "valid" region), Gaussian-weighted local statistics.
inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) {
  require_same_shape(a, b, "ssim");
  const auto win = static_cast<std::size_t>(p.window);
  if (a.width() < win || a.height() < win) throw ShapeError("ssim: image smaller than the SSIM window");
  static thread_local std::vector<double> cached;
  static thread_local int cached_size = 0;
  static thread_local double cached_sigma = 0.0;
  if (cached_size != p.window || cached_sigma != p.sigma) {
    cached = detail::gaussian_window(p.window, p.sigma);
    cached_size = p.window;
    cached_sigma = p.sigma;
  }
  const std::vector<double>& w = cached;
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const std::size_t out_w = a.width() - win + 1, out_h = a.height() - win + 1;
  const std::size_t stride = a.width();
  const auto pa = a.pixels();
  const auto pb = b.pixels();
  double total = 0.0;
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t wy = 0; wy < win; ++wy) {
        const double* ra = pa.data() + (oy + wy) * stride + ox;
        const double* rb = pb.data() + (oy + wy) * stride + ox;
        const double* rw = w.data() + wy * win;
        for (std::size_t wx = 0; wx < win; ++wx) {
          const double g = rw[wx], va = ra[wx], vb = rb[wx];
          ma += g * va;
          mb += g * vb;
          saa += g * va * va;
          sbb += g * vb * vb;
          sab += g * va * vb;
        }
      }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
  }
  return total / static_cast<double>(out_w * out_h);
}

// ---------------------------------------------------------------------------
// Discrete Fourier transform

using Spectrum = std::vector<std::complex<double>>;

namespace detail {

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

// In-place 1D transform over a strided sequence. sign = -1 forward, +1 inverse
// (unscaled).
inline void dft1d(std::complex<double>* base, std::size_t n, std::size_t stride, int sign,
                  std::vector<std::complex<double>>& scratch) {
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) scratch[i] = base[i * stride];
  if (is_pow2(n)) {
    // iterative radix-2
    for (std::size_t i = 1, j = 0; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(scratch[i], scratch[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
      for (std::size_t i = 0; i < n; i += len) {
        for (std::size_t k = 0; k < len / 2; ++k) {
          const std::complex<double> wk = std::polar(1.0, ang * static_cast<double>(k));
          const auto u = scratch[i + k];
          const auto v = scratch[i + k + len / 2] * wk;
          scratch[i + k] = u + v;
          scratch[i + k + len / 2] = u - v;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) base[i * stride] = scratch[i];
    return;
  }
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += scratch[t] * std::polar(1.0, ang);
    }
    base[k * stride] = acc;
  }
}

}  // namespace detail

// Unshifted 2D DFT, row-major width x height.
inline Spectrum dft2d(const Image& img) {
  const std::size_t w = img.width(), h = img.height();
  Spectrum s(w * h);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = img[i];
  std::vector<std::complex<double>> scratch;
  for (std::size_t y = 0; y < h; ++y) detail::dft1d(s.data() + y * w, w, 1, -1, scratch);
  for (std::size_t x = 0; x < w; ++x) detail::dft1d(s.data() + x, h, w, -1, scratch);
  return s;
}

// Inverse of dft2d, returns the real part (not clamped).
inline std::vector<double> idft2d_real(Spectrum s, std::size_t w, std::size_t h) {
  std::vector<std::complex<double>> scratch;
  for (std::size_t y = 0; y < h; ++y) detail::dft1d(s.data() + y * w, w, 1, +1, scratch);
  for (std::size_t x = 0; x < w; ++x) detail::dft1d(s.data() + x, h, w, +1, scratch);
  std::vector<double> out(w * h);
  const double scale = 1.0 / static_cast<double>(w * h);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s[i].real() * scale;
  return out;
}

// Radial frequency of every coefficient of an unshifted w x h spectrum, in
// cycles per pixel. Equivalent to the distance from the centre of the
// shifted spectrum; symmetric under (u, v) -> (-u, -v).
inline std::vector<double> radial_frequencies(std::size_t w, std::size_t h) {
  std::vector<double> r(w * h);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y <= h / 2 ? static_cast<std::int64_t>(y)
                                                     : static_cast<std::int64_t>(y) - static_cast<std::int64_t>(h)) /
                      static_cast<double>(h);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx =
          static_cast<double>(x <= w / 2 ? static_cast<std::int64_t>(x)
                                         : static_cast<std::int64_t>(x) - static_cast<std::int64_t>(w)) /
          static_cast<double>(w);
      r[y * w + x] = std::sqrt(fx * fx + fy * fy);
    }
  }
  return r;
}

// Radius at or below which coefficients survive when `fraction` of the
// coefficient count is to be removed. Ties at the cut radius are kept
// together; the DC bin always survives.
inline double lowpass_cut_radius(std::size_t w, std::size_t h, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw DomainError("filtered fraction must lie in [0, 1]");
  auto r = radial_frequencies(w, h);
  std::sort(r.begin(), r.end());
  const auto n = r.size();
  auto removed = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  removed = std::min(removed, n - 1);
  return r[n - 1 - removed];
}

inline Image fourier_lowpass(const Image& x, double filtered_fraction) {
  const double cut = lowpass_cut_radius(x.width(), x.height(), filtered_fraction);
  auto spec = dft2d(x);
  const auto radius = radial_frequencies(x.width(), x.height());
  for (std::size_t i = 0; i < spec.size(); ++i)
    if (radius[i] > cut) spec[i] = 0.0;
  Image out(x.width(), x.height(), idft2d_real(std::move(spec), x.width(), x.height()));
  out.clamp01();
  return out;
}

// Sum of |X_k|^2 over coefficients with radial frequency strictly above
// `min_radius` (cycles/pixel). min_radius < 0 gives the total energy.
inline double spectral_energy(const Image& x, double min_radius = -1.0) {
  const auto spec = dft2d(x);
  const auto radius = radial_frequencies(x.width(), x.height());
  double e = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i)
    if (radius[i] > min_radius) e += std::norm(spec[i]);
  return e;
}

// Separable Gaussian blur with clamp-to-edge borders; sigma 0 is identity.
inline Image gaussian_blur(const Image& x, double sigma) {
  if (!(sigma >= 0.0)) throw DomainError("blur sigma must be non-negative");
  if (sigma == 0.0) return x;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  for (auto& v : k) v /= total;
  const auto w = static_cast<int>(x.width()), h = static_cast<int>(x.height());
  Image tmp(x.width(), x.height()), out(x.width(), x.height());
  for (int y = 0; y < h; ++y)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * x.at(std::clamp(c + i, 0, w - 1), y);
      tmp.at(c, y) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(c, std::clamp(y + i, 0, h - 1));
      out.at(c, y) = acc;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Additive noise

inline Image add_gaussian_noise(const Image& x, double variance, std::uint64_t seed) {
  if (!(variance >= 0.0)) throw DomainError("gaussian noise variance must be non-negative");
  Image out = x;
  if (variance == 0.0) return out;
  auto eng = make_engine(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(variance));
  for (auto& v : out.pixels()) v += dist(eng);
  out.clamp01();
  return out;
}

// Photon-count model: Poisson(scale * x) / scale.
inline Image add_poisson_noise(const Image& x, double scale, std::uint64_t seed) {
  if (!(scale > 0.0)) throw DomainError("poisson noise scale must be positive");
  Image out = x;
  auto eng = make_engine(seed);
  for (auto& v : out.pixels()) {
    const double mean = v * scale;
    if (mean <= 0.0) {
      v = 0.0;
      continue;
    }
    std::poisson_distribution<long long> dist(mean);
    v = static_cast<double>(dist(eng)) / scale;
  }
  out.clamp01();
  return out;
}

enum class NoiseKind { none, gaussian, poisson };

struct NoiseSetting {
  NoiseKind kind = NoiseKind::none;
  double param = 0.0;  // variance (gaussian) or count scale (poisson)
};

inline Image apply_noise(const Image& x, const NoiseSetting& n, std::uint64_t seed) {
  switch (n.kind) {
    case NoiseKind::gaussian:
      return add_gaussian_noise(x, n.param, seed);
    case NoiseKind::poisson:
      return add_poisson_noise(x, n.param, seed);
    case NoiseKind::none:
      break;
  }
  return x;
}

}  // namespace jitterlab
