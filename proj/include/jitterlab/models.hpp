#pragma once

// Gaze network (feature extractor F + regression head) and domain
// discriminator D, expressed over the autodiff tape.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "jitterlab/autodiff.hpp"
#include "jitterlab/errors.hpp"
#include "jitterlab/geometry.hpp"
#include "jitterlab/image.hpp"
#include "jitterlab/optim.hpp"
#include "jitterlab/rng.hpp"

namespace jitterlab {

struct Architecture {
  std::size_t image_size = 32;
  std::vector<std::size_t> channels = {8, 16, 32, 64};
  std::size_t feature_dim = 128;
  std::size_t head_hidden = 64;
  std::size_t disc_hidden = 64;
  double leaky_slope = 0.01;

  // Encodes every field that changes the parameter table.
  std::string id() const {
    std::ostringstream os;
    os << "cnn" << channels.size() << "-c";
    for (std::size_t i = 0; i < channels.size(); ++i) os << (i ? "." : "") << channels[i];
    os << "-f" << feature_dim << "-h" << head_hidden << "-d" << disc_hidden << "-img" << image_size;
    return os.str();
  }

  std::size_t final_spatial() const {
    std::size_t s = image_size;
    for (std::size_t i = 0; i < channels.size(); ++i) s = (s + 2 - 3) / 2 + 1;
    return s;
  }

  // Expected parameter shapes of the gaze network (F.* and G.*).
  ParamStore<float> gaze_shapes() const {
    ParamStore<float> s;
    std::size_t in = 1;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const auto tag = "F.conv" + std::to_string(i + 1);
      s[tag + ".w"] = Tensor<float>(Shape{channels[i], in, 3, 3});
      s[tag + ".b"] = Tensor<float>(Shape{channels[i]});
      in = channels[i];
    }
    const auto fs = final_spatial();
    s["F.fc.w"] = Tensor<float>(Shape{in * fs * fs, feature_dim});
    s["F.fc.b"] = Tensor<float>(Shape{feature_dim});
    s["G.fc1.w"] = Tensor<float>(Shape{feature_dim, head_hidden});
    s["G.fc1.b"] = Tensor<float>(Shape{head_hidden});
    s["G.fc2.w"] = Tensor<float>(Shape{head_hidden, 2});
    s["G.fc2.b"] = Tensor<float>(Shape{2});
    return s;
  }

  ParamStore<float> discriminator_shapes() const {
    ParamStore<float> s;
    s["D.fc1.w"] = Tensor<float>(Shape{feature_dim, disc_hidden});
    s["D.fc1.b"] = Tensor<float>(Shape{disc_hidden});
    s["D.fc2.w"] = Tensor<float>(Shape{disc_hidden, 1});
    s["D.fc2.b"] = Tensor<float>(Shape{1});
    return s;
  }
};

namespace detail {

inline std::size_t fan_in(const std::string& name, const Shape& shape) {
  if (shape.size() == 4) return shape[1] * shape[2] * shape[3];
  if (shape.size() == 2) return shape[0];
  (void)name;
  return 0;
}

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); a bias uses its layer's fan-in.
template <class T>
ParamStore<T> init_uniform(const ParamStore<float>& shapes, std::uint64_t seed) {
  ParamStore<T> out;
  auto eng = make_engine(seed);
  for (const auto& [name, proto] : shapes) {
    if (name.ends_with(".b")) continue;
    const auto layer = name.substr(0, name.size() - 2);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(name, proto.shape())));
    Tensor<T> w(proto.shape());
    for (auto& v : w.values()) v = static_cast<T>(uniform(eng, -bound, bound));
    Tensor<T> b(shapes.at(layer + ".b").shape());
    for (auto& v : b.values()) v = static_cast<T>(uniform(eng, -bound, bound));
    out.emplace(name, std::move(w));
    out.emplace(layer + ".b", std::move(b));
  }
  return out;
}

template <class T>
ad::Var<T> param_leaf(ad::Tape<T>& tape, const ParamStore<T>& params, const std::string& name, bool grads) {
  if (tape.has(name)) return tape.named(name);
  return tape.leaf(params.at(name), name, grads);
}

template <class T>
void check_against(const ParamStore<T>& params, const ParamStore<float>& expected, const std::string& arch) {
  for (const auto& [name, proto] : expected) {
    auto it = params.find(name);
    if (it == params.end()) throw ParseError("parameter '" + name + "' missing for architecture " + arch);
    if (it->second.shape() != proto.shape())
      throw ParseError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) + ", architecture " +
                       arch + " expects " + shape_str(proto.shape()));
  }
}

}  // namespace detail

// Image batch -> [N, 1, H, W] tensor.
template <class T>
Tensor<T> to_batch(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("empty image batch");
  const auto w = images[0].width(), h = images[0].height();
  Tensor<T> t(Shape{images.size(), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].width() != w || images[i].height() != h) throw ShapeError("image batch has mixed dimensions");
    for (std::size_t j = 0; j < w * h; ++j) t[i * w * h + j] = static_cast<T>(images[i][j]);
  }
  return t;
}

template <class T>
Tensor<T> to_label_tensor(std::span<const GazeLabel> labels) {
  Tensor<T> t(Shape{labels.size(), 2});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    t[2 * i] = static_cast<T>(labels[i].pitch);
    t[2 * i + 1] = static_cast<T>(labels[i].yaw);
  }
  return t;
}

template <class T>
std::vector<GazeLabel> to_labels(const Tensor<T>& t) {
  std::vector<GazeLabel> out(t.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = {static_cast<double>(t[2 * i]), static_cast<double>(t[2 * i + 1])};
  return out;
}

// Feature extractor F and gaze head; theta_G is the union of both.
template <class T>
class GazeModel {
 public:
  using scalar_type = T;

  GazeModel() = default;
  GazeModel(Architecture arch, std::uint64_t seed)
      : arch_(std::move(arch)), params_(detail::init_uniform<T>(arch_.gaze_shapes(), seed)) {}
  GazeModel(Architecture arch, ParamStore<T> params) : arch_(std::move(arch)), params_(std::move(params)) {
    detail::check_against(params_, arch_.gaze_shapes(), arch_.id());
  }

  static GazeModel zeros(Architecture arch) {
    ParamStore<T> p;
    for (const auto& [name, proto] : arch.gaze_shapes()) p.emplace(name, Tensor<T>(proto.shape()));
    return GazeModel(std::move(arch), std::move(p));
  }

  const Architecture& arch() const { return arch_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  std::vector<std::string> param_names() const {
    std::vector<std::string> n;
    for (const auto& kv : params_) n.push_back(kv.first);
    return n;
  }

  // x [N, 1, S, S] -> features [N, feature_dim]
  ad::Var<T> extract(ad::Tape<T>& tape, ad::Var<T> x, bool param_grads = true) const {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != arch_.image_size || s[3] != arch_.image_size)
      throw ShapeError("extract: expected input [N,1," + std::to_string(arch_.image_size) + "," +
                       std::to_string(arch_.image_size) + "], got " + shape_str(s));
    const T slope = static_cast<T>(arch_.leaky_slope);
    ad::Var<T> h = x;
    for (std::size_t i = 0; i < arch_.channels.size(); ++i) {
      const auto tag = "F.conv" + std::to_string(i + 1);
      h = ad::conv2d(h, leaf(tape, tag + ".w", param_grads), leaf(tape, tag + ".b", param_grads), 2, 1);
      h = ad::leaky_relu(h, slope);
    }
    h = ad::flatten(h);
    return ad::affine(h, leaf(tape, "F.fc.w", param_grads), leaf(tape, "F.fc.b", param_grads));
  }

  // features [N, feature_dim] -> (pitch, yaw) [N, 2]
  ad::Var<T> head(ad::Tape<T>& tape, ad::Var<T> f, bool param_grads = true) const {
    if (f.shape().size() != 2 || f.shape()[1] != arch_.feature_dim)
      throw ShapeError("head: expected features [N," + std::to_string(arch_.feature_dim) + "], got " +
                       shape_str(f.shape()));
    auto h = ad::affine(f, leaf(tape, "G.fc1.w", param_grads), leaf(tape, "G.fc1.b", param_grads));
    h = ad::leaky_relu(h, static_cast<T>(arch_.leaky_slope));
    return ad::affine(h, leaf(tape, "G.fc2.w", param_grads), leaf(tape, "G.fc2.b", param_grads));
  }

  ad::Var<T> predict(ad::Tape<T>& tape, ad::Var<T> x, bool param_grads = true) const {
    return head(tape, extract(tape, x, param_grads), param_grads);
  }

  Tensor<T> features(std::span<const Image> images) const {
    ad::Tape<T> tape;
    auto x = tape.constant(to_batch<T>(images));
    return extract(tape, x, false).value();
  }

  std::vector<GazeLabel> predict(std::span<const Image> images) const {
    ad::Tape<T> tape;
    auto x = tape.constant(to_batch<T>(images));
    return to_labels(predict(tape, x, false).value());
  }

  // Batched inference over an arbitrarily long sequence.
  std::vector<GazeLabel> predict_all(std::span<const Image> images, std::size_t batch = 128) const {
    std::vector<GazeLabel> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); i += batch) {
      auto part = predict(images.subspan(i, std::min(batch, images.size() - i)));
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }

  Tensor<T> features_all(std::span<const Image> images, std::size_t batch = 128) const {
    std::vector<T> vals;
    for (std::size_t i = 0; i < images.size(); i += batch) {
      auto part = features(images.subspan(i, std::min(batch, images.size() - i)));
      vals.insert(vals.end(), part.values().begin(), part.values().end());
    }
    return Tensor<T>(Shape{images.size(), arch_.feature_dim}, std::move(vals));
  }

  template <class U>
  GazeModel<U> cast() const {
    ParamStore<U> p;
    for (const auto& [name, t] : params_) p.emplace(name, t.template cast<U>());
    return GazeModel<U>(arch_, std::move(p));
  }

 private:
  ad::Var<T> leaf(ad::Tape<T>& tape, const std::string& name, bool grads) const {
    return detail::param_leaf(tape, params_, name, grads);
  }

  Architecture arch_;
  ParamStore<T> params_;
};

// Domain classifier over features: affine -> leaky-ReLU -> affine -> sigmoid.
// Output is the probability that a feature comes from the target domain.
template <class T>
class Discriminator {
 public:
  using scalar_type = T;

  // Largest logit whose sigmoid stays strictly below 1 in T.
  static constexpr T kLogitLimit = std::is_same_v<T, float> ? T(15) : T(30);

  Discriminator() = default;
  Discriminator(Architecture arch, std::uint64_t seed)
      : arch_(std::move(arch)), params_(detail::init_uniform<T>(arch_.discriminator_shapes(), seed)) {}
  Discriminator(Architecture arch, ParamStore<T> params) : arch_(std::move(arch)), params_(std::move(params)) {
    detail::check_against(params_, arch_.discriminator_shapes(), arch_.id());
  }

  static Discriminator zeros(Architecture arch) {
    ParamStore<T> p;
    for (const auto& [name, proto] : arch.discriminator_shapes()) p.emplace(name, Tensor<T>(proto.shape()));
    return Discriminator(std::move(arch), std::move(p));
  }

  const Architecture& arch() const { return arch_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // features [N, d] -> probabilities [N]
  ad::Var<T> forward(ad::Tape<T>& tape, ad::Var<T> f, bool param_grads = true) const {
    if (f.shape().size() != 2 || f.shape()[1] != arch_.feature_dim)
      throw ShapeError("discriminate: expected features [N," + std::to_string(arch_.feature_dim) + "], got " +
                       shape_str(f.shape()));
    auto h = ad::affine(f, leaf(tape, "D.fc1.w", param_grads), leaf(tape, "D.fc1.b", param_grads));
    h = ad::leaky_relu(h, static_cast<T>(arch_.leaky_slope));
    auto logit = ad::affine(h, leaf(tape, "D.fc2.w", param_grads), leaf(tape, "D.fc2.b", param_grads));
    return ad::sigmoid(ad::reshape(logit, Shape{f.shape()[0]}), kLogitLimit);
  }

  std::vector<double> discriminate(const Tensor<T>& features) const {
    ad::Tape<T> tape;
    auto p = forward(tape, tape.constant(features), false).value();
    return {p.values().begin(), p.values().end()};
  }

  template <class U>
  Discriminator<U> cast() const {
    ParamStore<U> p;
    for (const auto& [name, t] : params_) p.emplace(name, t.template cast<U>());
    return Discriminator<U>(arch_, std::move(p));
  }

 private:
  ad::Var<T> leaf(ad::Tape<T>& tape, const std::string& name, bool grads) const {
    return detail::param_leaf(tape, params_, name, grads);
  }

  Architecture arch_;
  ParamStore<T> params_;
};

// Single affine layer from pixels to (pitch, yaw). Used where a locally
// linear model gives closed-form attack behaviour.
template <class T>
class LinearGazeModel {
 public:
  using scalar_type = T;

  LinearGazeModel(std::size_t image_size, std::uint64_t seed) : size_(image_size) {
    ParamStore<float> shapes;
    shapes["L.fc.w"] = Tensor<float>(Shape{image_size * image_size, 2});
    shapes["L.fc.b"] = Tensor<float>(Shape{2});
    params_ = detail::init_uniform<T>(shapes, seed);
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  std::size_t image_size() const { return size_; }

  ad::Var<T> predict(ad::Tape<T>& tape, ad::Var<T> x, bool param_grads = true) const {
    auto h = ad::flatten(x);
    return ad::affine(h, detail::param_leaf(tape, params_, "L.fc.w", param_grads),
                      detail::param_leaf(tape, params_, "L.fc.b", param_grads));
  }

  std::vector<GazeLabel> predict(std::span<const Image> images) const {
    ad::Tape<T> tape;
    return to_labels(predict(tape, tape.constant(to_batch<T>(images)), false).value());
  }

 private:
  std::size_t size_;
  ParamStore<T> params_;
};

}  // namespace jitterlab
