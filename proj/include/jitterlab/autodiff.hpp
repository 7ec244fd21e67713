#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation executed through the free functions below
// (forward values are computed eagerly). backward() walks the tape in reverse
// and accumulates adjoints. Leaves may be named so that gradients can be
// requested by name; both parameters and model inputs are ordinary leaves,
// which is how input gradients for adversarial attacks are obtained.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "jitterlab/errors.hpp"
#include "jitterlab/tensor.hpp"

namespace jitterlab::ad {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Named leaf. Names must be unique on a tape.
  Var<T> leaf(Tensor<T> value, const std::string& name, bool requires_grad = true) {
    if (names_.contains(name)) throw Error("duplicate leaf name on tape: " + name);
    check_finite(value, "leaf '" + name + "'");
    const auto id = push({"leaf:" + name, std::move(value), {}, {}, {}, requires_grad});
    names_.emplace(name, id);
    return {this, id};
  }

  Var<T> constant(Tensor<T> value) {
    check_finite(value, "constant");
    return {this, push({"const", std::move(value), {}, {}, {}, false})};
  }

  // Appends an operation result. requires_grad is inherited from parents.
  Var<T> record(std::string op, Tensor<T> value, std::vector<std::size_t> parents, BackwardFn backward) {
    bool rg = false;
    for (auto p : parents) rg = rg || nodes_[p].requires_grad;
    const auto id = nodes_.size();
    check_finite(value, "node #" + std::to_string(id) + " (" + op + ")");
    push({std::move(op), std::move(value), {}, std::move(parents), rg ? std::move(backward) : BackwardFn{}, rg});
    return {this, id};
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor<T>& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool has(const std::string& name) const { return names_.contains(name); }

  Var<T> named(const std::string& name) {
    auto it = names_.find(name);
    if (it == names_.end()) throw Error("no leaf named '" + name + "' on the tape");
    return {this, it->second};
  }

  // Adjoint buffer of a node, allocated as zeros on first use.
  Tensor<T>& accum(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  // Reverse pass from a scalar node. Previous adjoints are discarded.
  void backward(Var<T> loss) {
    if (loss.tape != this) throw Error("backward: variable belongs to a different tape");
    if (value(loss).size() != 1) throw ShapeError("backward: loss node must be scalar, got " + shape_str(value(loss).shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    accum(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
    for (std::size_t i = 0; i <= loss.id; ++i) {
      const auto& g = nodes_[i].grad;
      if (g.size() && !g.all_finite())
        throw NumericError("non-finite gradient at node #" + std::to_string(i) + " (" + nodes_[i].op + ")");
    }
  }

  // Gradient of the last backward() w.r.t. a named leaf (zeros if the leaf
  // does not influence the loss).
  Tensor<T> gradient(const std::string& name) const {
    auto it = names_.find(name);
    if (it == names_.end()) throw Error("gradient requested for '" + name + "', which is not on the tape");
    const auto& n = nodes_[it->second];
    return n.grad.size() ? n.grad : Tensor<T>(n.value.shape());
  }

  std::map<std::string, Tensor<T>> backward(Var<T> loss, const std::vector<std::string>& wrt) {
    for (const auto& w : wrt)
      if (!names_.contains(w)) throw Error("gradient requested for '" + w + "', which is not on the tape");
    backward(loss);
    std::map<std::string, Tensor<T>> out;
    for (const auto& w : wrt) out.emplace(w, gradient(w));
    return out;
  }

 private:
  std::size_t push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  static void check_finite(const Tensor<T>& t, const std::string& where) {
    if (!t.all_finite()) throw NumericError("non-finite value produced by " + where);
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> names_;
};

// ---------------------------------------------------------------------------
// Dense kernels

namespace kernel {

// C[m,n] += A[m,k] * B[k,n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      if (av == T(0)) continue;
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

}  // namespace kernel

namespace detail {

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.tape != b.tape) throw Error(std::string(op) + ": operands live on different tapes");
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void require_rank(const Var<T>& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
}

// Elementwise unary op given f(x) and df/dx expressed through (x, y).
template <class T, class F, class D>
Var<T> unary(const Var<T>& a, const char* op, F f, D df) {
  const auto& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const auto pa = a.id;
  return a.tape->record(op, std::move(y), {pa}, [pa, df](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(pa)) return;
    const auto& g = t.grad_of(self);
    const auto& xv = t.value(pa);
    const auto& yv = t.value(self);
    auto& ga = t.accum(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const auto pa = a.id, pb = b.id;
  return a.tape->record("add", std::move(y), {pa, pb}, [pa, pb](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    for (auto p : {pa, pb}) {
      if (!t.requires_grad(p)) continue;
      auto& gp = t.accum(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const auto pa = a.id, pb = b.id;
  return a.tape->record("sub", std::move(y), {pa, pb}, [pa, pb](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    if (t.requires_grad(pa)) {
      auto& ga = t.accum(pa);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(pb)) {
      auto& gb = t.accum(pb);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const auto pa = a.id, pb = b.id;
  return a.tape->record("mul", std::move(y), {pa, pb}, [pa, pb](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    if (t.requires_grad(pa)) {
      const auto& bv2 = t.value(pb);
      auto& ga = t.accum(pa);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (t.requires_grad(pb)) {
      const auto& av2 = t.value(pa);
      auto& gb = t.accum(pb);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

// Elementwise product with a constant tensor (e.g. a 0/1 mask).
template <class T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& c) {
  if (a.shape() != c.shape())
    throw ShapeError("mul_const: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(c.shape()));
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c[i];
  const auto pa = a.id;
  return a.tape->record("mul_const", std::move(y), {pa}, [pa, c](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.accum(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary(a, "scale", [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return detail::unary(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Var<T> abs(const Var<T>& a) {
  return detail::unary(
      a, "abs", [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  return detail::unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(const Var<T>& a) {
  return detail::unary(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Var<T> sqrt(const Var<T>& a) {
  return detail::unary(a, "sqrt", [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

// Logistic sigmoid with logits clamped to [-limit, limit]; the adjoint is
// zero where the clamp is active.
template <class T>
Var<T> sigmoid(const Var<T>& a, T limit = T(30)) {
  return detail::unary(
      a, "sigmoid",
      [limit](T x) {
        const T z = std::clamp(x, -limit, limit);
        return T(1) / (T(1) + std::exp(-z));
      },
      [limit](T x, T y) { return (x < -limit || x > limit) ? T(0) : y * (T(1) - y); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.01)) {
  return detail::unary(
      a, "leaky_relu", [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum(const Var<T>& a) {
  const auto& x = a.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]);
  const auto pa = a.id;
  return a.tape->record("sum", Tensor<T>::scalar(static_cast<T>(acc)), {pa}, [pa](Tape<T>& t, std::size_t self) {
    const T g = t.grad_of(self)[0];
    auto& ga = t.accum(pa);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  const auto n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

// [N, M] -> [N]
template <class T>
Var<T> sum_rows(const Var<T>& a) {
  detail::require_rank(a, 2, "sum_rows");
  const auto& x = a.value();
  const auto n = x.dim(0), m = x.dim(1);
  Tensor<T> y(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += static_cast<double>(x[i * m + j]);
    y[i] = static_cast<T>(acc);
  }
  const auto pa = a.id;
  return a.tape->record("sum_rows", std::move(y), {pa}, [pa, n, m](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.accum(pa);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i];
  });
}

template <class T>
Var<T> l1_norm(const Var<T>& a) {
  return sum(abs(a));
}

template <class T>
Var<T> l2_norm(const Var<T>& a) {
  return sqrt(sum(mul(a, a)));
}

template <class T>
Var<T> dot(const Var<T>& a, const Var<T>& b) {
  return sum(mul(a, b));
}

// Euclidean norm of every row: [N, D] -> [N]
template <class T>
Var<T> row_l2norm(const Var<T>& a) {
  return sqrt(sum_rows(mul(a, a)));
}

// Divides row i of a [N, D] tensor by s[i].
template <class T>
Var<T> div_rows(const Var<T>& a, const Var<T>& s) {
  detail::require_rank(a, 2, "div_rows");
  const auto n = a.shape()[0], d = a.shape()[1];
  if (s.shape() != Shape{n}) throw ShapeError("div_rows: divisor shape " + shape_str(s.shape()));
  const auto& x = a.value();
  const auto& sv = s.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = x[i * d + j] / sv[i];
  const auto pa = a.id, ps = s.id;
  return a.tape->record("div_rows", std::move(y), {pa, ps}, [pa, ps, n, d](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& sv2 = t.value(ps);
    const auto& yv = t.value(self);
    if (t.requires_grad(pa)) {
      auto& ga = t.accum(pa);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += g[i * d + j] / sv2[i];
    }
    if (t.requires_grad(ps)) {
      auto& gs = t.accum(ps);
      for (std::size_t i = 0; i < n; ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < d; ++j) acc += g[i * d + j] * yv[i * d + j];
        gs[i] -= acc / sv2[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layers

// A [N, D] times B [M, D]^T -> [N, M]
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  const auto n = a.shape()[0], d = a.shape()[1], m = b.shape()[0];
  if (b.shape()[1] != d) throw ShapeError("matmul_nt: inner dimensions differ");
  Tensor<T> y(Shape{n, m});
  kernel::gemm_nt(a.value().data(), b.value().data(), y.data(), n, m, d);
  const auto pa = a.id, pb = b.id;
  return a.tape->record("matmul_nt", std::move(y), {pa, pb}, [pa, pb, n, m, d](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    // dA = G B ; dB = G^T A
    if (t.requires_grad(pa)) kernel::gemm_nn(g.data(), t.value(pb).data(), t.accum(pa).data(), n, d, m);
    if (t.requires_grad(pb)) kernel::gemm_tn(g.data(), t.value(pa).data(), t.accum(pb).data(), m, d, n);
  });
}

// x [N, in], w [in, out], b [out] -> [N, out]
template <class T>
Var<T> affine(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::require_rank(x, 2, "affine");
  detail::require_rank(w, 2, "affine");
  const auto n = x.shape()[0], in = x.shape()[1], out = w.shape()[1];
  if (w.shape()[0] != in)
    throw ShapeError("affine: input width " + std::to_string(in) + " vs weight " + shape_str(w.shape()));
  if (b.shape() != Shape{out}) throw ShapeError("affine: bias shape " + shape_str(b.shape()));
  Tensor<T> y(Shape{n, out});
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out; ++j) y[i * out + j] = bv[j];
  kernel::gemm_nn(x.value().data(), w.value().data(), y.data(), n, out, in);
  const auto px = x.id, pw = w.id, pb = b.id;
  return x.tape->record("affine", std::move(y), {px, pw, pb}, [px, pw, pb, n, in, out](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    if (t.requires_grad(px)) kernel::gemm_nt(g.data(), t.value(pw).data(), t.accum(px).data(), n, in, out);
    if (t.requires_grad(pw)) kernel::gemm_tn(t.value(px).data(), g.data(), t.accum(pw).data(), in, out, n);
    if (t.requires_grad(pb)) {
      auto& gb = t.accum(pb);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out; ++j) gb[j] += g[i * out + j];
    }
  });
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, stride, pad, ho, wo;
};

namespace detail {

// cols [c*k*k, ho*wo] for one sample
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((ci * g.k + ky) * g.k + kx) * hw;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] = inside ? x[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : T(0);
          }
        }
      }
}

template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((ci * g.k + ky) * g.k + kx) * hw;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.wo + ox];
          }
        }
      }
}

}  // namespace detail

// x [N, C, H, W], w [O, C, K, K], b [O] -> [N, O, Ho, Wo]; zero padding.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride, std::size_t pad) {
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3])
    throw ShapeError("conv2d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ws));
  if (b.shape() != Shape{ws[0]}) throw ShapeError("conv2d: bias shape " + shape_str(b.shape()));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3]) throw ShapeError("conv2d: kernel larger than padded input");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  const std::size_t ckk = g.c * g.k * g.k, hw = g.ho * g.wo;

  std::vector<T> cols(g.n * ckk * hw);
  Tensor<T> y(Shape{g.n, g.o, g.ho, g.wo});
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  for (std::size_t s = 0; s < g.n; ++s) {
    T* cs = cols.data() + s * ckk * hw;
    detail::im2col(xv.data() + s * g.c * g.h * g.w, g, cs);
    T* ys = y.data() + s * g.o * hw;
    for (std::size_t oc = 0; oc < g.o; ++oc)
      for (std::size_t p = 0; p < hw; ++p) ys[oc * hw + p] = bv[oc];
    kernel::gemm_nn(wv.data(), cs, ys, g.o, hw, ckk);
  }
  const auto px = x.id, pw = w.id, pb = b.id;
  return x.tape->record(
      "conv2d", std::move(y), {px, pw, pb},
      [px, pw, pb, g, ckk, hw, cols = std::move(cols)](Tape<T>& t, std::size_t self) {
        const auto& gy = t.grad_of(self);
        const bool need_x = t.requires_grad(px), need_w = t.requires_grad(pw), need_b = t.requires_grad(pb);
        std::vector<T> dcols(need_x ? ckk * hw : 0);
        std::vector<T> cols_t(need_w ? hw * ckk : 0);
        for (std::size_t s = 0; s < g.n; ++s) {
          const T* gs = gy.data() + s * g.o * hw;
          const T* cs = cols.data() + s * ckk * hw;
          if (need_w) {
            for (std::size_t r = 0; r < ckk; ++r)
              for (std::size_t p = 0; p < hw; ++p) cols_t[p * ckk + r] = cs[r * hw + p];
            kernel::gemm_nn(gs, cols_t.data(), t.accum(pw).data(), g.o, ckk, hw);
          }
          if (need_b) {
            auto& gb = t.accum(pb);
            for (std::size_t oc = 0; oc < g.o; ++oc) {
              T acc = T(0);
              for (std::size_t p = 0; p < hw; ++p) acc += gs[oc * hw + p];
              gb[oc] += acc;
            }
          }
          if (need_x) {
            std::fill(dcols.begin(), dcols.end(), T(0));
            kernel::gemm_tn(t.value(pw).data(), gs, dcols.data(), ckk, hw, g.o);
            detail::col2im(dcols.data(), g, t.accum(px).data() + s * g.c * g.h * g.w);
          }
        }
      });
}

// Non-overlapping k x k average pooling: [N, C, H, W] -> [N, C, H/k, W/k]
template <class T>
Var<T> avg_pool2d(const Var<T>& x, std::size_t k) {
  detail::require_rank(x, 4, "avg_pool2d");
  const auto s = x.shape();
  if (k == 0 || s[2] % k || s[3] % k) throw ShapeError("avg_pool2d: spatial size not divisible by pool size");
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3], ho = h / k, wo = w / k;
  const T inv = T(1) / static_cast<T>(k * k);
  Tensor<T> y(Shape{n, c, ho, wo});
  const auto& xv = x.value();
  for (std::size_t nc = 0; nc < n * c; ++nc)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T acc = T(0);
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) acc += xv[(nc * h + oy * k + dy) * w + ox * k + dx];
        y[(nc * ho + oy) * wo + ox] = acc * inv;
      }
  const auto px = x.id;
  return x.tape->record("avg_pool2d", std::move(y), {px}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& gx = t.accum(px);
    for (std::size_t nc = 0; nc < n * c; ++nc)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T v = g[(nc * ho + oy) * wo + ox] * inv;
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) gx[(nc * h + oy * k + dy) * w + ox * k + dx] += v;
        }
  });
}

// ---------------------------------------------------------------------------
// Structural

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> y = a.value().reshaped(std::move(shape));
  const auto pa = a.id;
  return a.tape->record("reshape", std::move(y), {pa}, [pa](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.accum(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// [N, ...] -> [N, prod(...)]
template <class T>
Var<T> flatten(const Var<T>& a) {
  const auto& s = a.shape();
  if (s.empty()) throw ShapeError("flatten of a rank-0 tensor");
  return reshape(a, Shape{s[0], shape_size(s) / s[0]});
}

// Concatenation along the leading (batch) dimension.
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Shape s = parts[0].shape();
  std::size_t rows = 0;
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != s.size() || !std::equal(ps.begin() + 1, ps.end(), s.begin() + 1))
      throw ShapeError("concat_rows: trailing dimensions differ");
    offsets.push_back(rows * (shape_size(s) / s[0]));
    rows += ps[0];
    ids.push_back(p.id);
  }
  s[0] = rows;
  Tensor<T> y(s);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& v = parts[i].value();
    std::copy(v.data(), v.data() + v.size(), y.data() + offsets[i]);
  }
  return parts[0].tape->record("concat_rows", std::move(y), ids, [ids, offsets](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.requires_grad(ids[i])) continue;
      auto& gp = t.accum(ids[i]);
      for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += g[offsets[i] + j];
    }
  });
}

// Rows [begin, end) of the leading dimension.
template <class T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t end) {
  Shape s = a.shape();
  if (s.empty() || begin > end || end > s[0]) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t row_len = shape_size(s) / s[0];
  s[0] = end - begin;
  const auto& v = a.value();
  Tensor<T> y(s, std::vector<T>(v.data() + begin * row_len, v.data() + end * row_len));
  const auto pa = a.id;
  const std::size_t off = begin * row_len;
  return a.tape->record("slice_rows", std::move(y), {pa}, [pa, off](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.accum(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
  });
}

// Same value, no gradient path.
template <class T>
Var<T> detach(const Var<T>& a) {
  return a.tape->constant(a.value());
}

}  // namespace jitterlab::ad
