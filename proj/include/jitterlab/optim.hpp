#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "jitterlab/errors.hpp"
#include "jitterlab/tensor.hpp"

namespace jitterlab {

// Named parameter table. Iteration order (lexicographic by name) is the
// canonical order for checkpoints and hashing.
template <class T>
using ParamStore = std::map<std::string, Tensor<T>>;

template <class T>
using GradMap = std::map<std::string, Tensor<T>>;

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return step_; }

  // One bias-corrected Adam update. grads must cover exactly the parameters.
  void step(ParamStore<T>& params, const GradMap<T>& grads) {
    if (grads.size() != params.size()) throw ShapeError("optimizer: gradient set does not match parameter set");
    for (const auto& [name, p] : params) {
      auto it = grads.find(name);
      if (it == grads.end()) throw ShapeError("optimizer: missing gradient for '" + name + "'");
      if (it->second.shape() != p.shape())
        throw ShapeError("optimizer: gradient shape " + shape_str(it->second.shape()) + " for '" + name +
                         "' does not match parameter " + shape_str(p.shape()));
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params) {
      const auto& g = grads.at(name);
      auto& m = first_.try_emplace(name, Tensor<T>(p.shape())).first->second;
      auto& v = second_.try_emplace(name, Tensor<T>(p.shape())).first->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = static_cast<T>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi);
        v[i] = static_cast<T>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] = static_cast<T>(p[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::map<std::string, Tensor<T>> first_;
  std::map<std::string, Tensor<T>> second_;
};

// FNV-1a over names, shapes and raw parameter bytes.
template <class T>
std::uint64_t hash_params(const ParamStore<T>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    for (auto d : t.shape()) mix(&d, sizeof d);
    mix(t.data(), t.size() * sizeof(T));
  }
  return h;
}

}  // namespace jitterlab
