// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Define-by-run reverse-mode differentiation over dense row-major tensors.
//
// A Tape owns every intermediate value produced during one forward pass.
// Parameters live outside the tape; `Tape::param` copies a parameter onto the
// tape as a leaf and `Tape::backward` accumulates leaf gradients back into
// Parameter::grad. Tapes are rebuilt every step and are confined to a single
// thread.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sslse/common.hpp"

namespace sslse::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)), value(numel(shape)), grad(numel(shape)) {}

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T{}); }
};

template <class T>
class Tape;

/// Handle to a node on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Shape& shape() const { return tape->node(id).shape; }
  const std::vector<T>& value() const { return tape->node(id).value; }
  const std::vector<T>& grad() const { return tape->node(id).grad; }
  std::size_t numel() const { return value().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  T item() const {
    check(numel() == 1, "item() on non-scalar tensor " + shape_str(shape()),
          ErrorCode::kShapeMismatch);
    return value()[0];
  }
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Shape shape, std::vector<T> value) {
    check(numel(shape) == value.size(),
          "constant: shape " + shape_str(shape) + " does not match " +
              std::to_string(value.size()) + " values",
          ErrorCode::kShapeMismatch);
    return push("constant", std::move(shape), std::move(value), false, nullptr);
  }

  /// Leaf that receives a gradient (used for input-gradient checks).
  Var<T> input(Shape shape, std::vector<T> value) {
    check(numel(shape) == value.size(), "input: shape/value mismatch",
          ErrorCode::kShapeMismatch);
    return push("input", std::move(shape), std::move(value), true, nullptr);
  }

  /// Leaf bound to a parameter. With `trainable == false` the parameter is
  /// read as a constant and never receives gradient.
  Var<T> param(Parameter<T>& p, bool trainable = true) {
    auto v = push("param:" + p.name, p.shape, p.value, trainable, nullptr);
    if (trainable) nodes_[v.id].param = &p;
    return v;
  }

  Var<T> push(std::string_view op, Shape shape, std::vector<T> value,
              bool requires_grad, BackwardFn fn) {
    for (const T& x : value)
      if (!std::isfinite(x))
        throw Error("non-finite output in op " + std::string(op), ErrorCode::kNonFinite);
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  bool needs(Var<T> v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of node `id`, zero-initialised on first use.
  std::vector<T>& grad_buf(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T{});
    return n.grad;
  }

  void backward(Var<T> loss) {
    check(loss.tape == this, "backward: variable from another tape");
    check(nodes_[loss.id].value.size() == 1, "backward: loss must be a scalar",
          ErrorCode::kShapeMismatch);
    if (!nodes_[loss.id].requires_grad) return;
    grad_buf(loss.id)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        auto& g = n.param->grad;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
    for (const Node& n : nodes_)
      if (!n.grad.empty())
        for (const T& g : n.grad)
          if (!std::isfinite(g)) throw Error("non-finite gradient", ErrorCode::kNonFinite);
  }

  void clear() { nodes_.clear(); }

 private:
  std::deque<Node> nodes_;
};

namespace detail {

struct AxisSplit {
  std::size_t outer, n, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  check(axis < s.size(), "axis " + std::to_string(axis) + " out of range for " + shape_str(s),
        ErrorCode::kShapeMismatch);
  AxisSplit a{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

inline void require_same(std::string_view op, const Shape& a, const Shape& b) {
  if (a != b)
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b),
                ErrorCode::kShapeMismatch);
}

inline void require_rank(std::string_view op, const Shape& a, std::size_t rank) {
  if (a.size() != rank)
    throw Error(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                    shape_str(a),
                ErrorCode::kShapeMismatch);
}

template <class T>
void same_tape(Var<T> a, Var<T> b) {
  check(a.tape == b.tape, "variables belong to different tapes");
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  detail::require_same("add", a.shape(), b.shape());
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Tape<T>& t = *a.tape;
  const bool req = t.needs(a) || t.needs(b);
  const std::size_t ia = a.id, ib = b.id;
  return t.push("add", a.shape(), std::move(out), req, [ia, ib](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.node(self).grad;
    for (std::size_t id : {ia, ib}) {
      if (!tp.node(id).requires_grad) continue;
      auto& d = tp.grad_buf(id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  detail::require_same("sub", a.shape(), b.shape());
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Tape<T>& t = *a.tape;
  const bool req = t.needs(a) || t.needs(b);
  const std::size_t ia = a.id, ib = b.id;
  return t.push("sub", a.shape(), std::move(out), req, [ia, ib](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.node(self).grad;
    if (tp.node(ia).requires_grad) {
      auto& d = tp.grad_buf(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (tp.node(ib).requires_grad) {
      auto& d = tp.grad_buf(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  detail::require_same("mul", a.shape(), b.shape());
  std::vector<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tape<T>& t = *a.tape;
  const bool req = t.needs(a) || t.needs(b);
  const std::size_t ia = a.id, ib = b.id;
  return t.push("mul", a.shape(), std::move(out), req, [ia, ib](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.node(self).grad;
    const auto& av = tp.node(ia).value;
    const auto& bv2 = tp.node(ib).value;
    if (tp.node(ia).requires_grad) {
      auto& d = tp.grad_buf(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv2[i];
    }
    if (tp.node(ib).requires_grad) {
      auto& d = tp.grad_buf(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  std::vector<T> out(a.value());
  for (auto& x : out) x *= c;
  const std::size_t ia = a.id;
  return a.tape->push("scale", a.shape(), std::move(out), a.tape->needs(a),
                      [ia, c](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        auto& d = tp.grad_buf(ia);
                        for (std::size_t i = 0; i < g.size(); ++i) d[i] += c * g[i];
                      });
}

template <class T>
Var<T> add_scalar(Var<T> a, T c) {
  std::vector<T> out(a.value());
  for (auto& x : out) x += c;
  const std::size_t ia = a.id;
  return a.tape->push("add_scalar", a.shape(), std::move(out), a.tape->needs(a),
                      [ia](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        auto& d = tp.grad_buf(ia);
                        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                      });
}

namespace detail {

/// Unary elementwise op given f(x) and f'(x, y).
template <class T, class F, class DF>
Var<T> unary(std::string_view name, Var<T> a, F f, DF df) {
  const auto& av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id;
  return a.tape->push(name, a.shape(), std::move(out), a.tape->needs(a),
                      [ia, df](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        const auto& x = tp.node(ia).value;
                        const auto& y = tp.node(self).value;
                        auto& d = tp.grad_buf(ia);
                        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * df(x[i], y[i]);
                      });
}

}  // namespace detail

template <class T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary<T>(
      "sigmoid", a, [](T x) { return detail::sigmoid_scalar(x); },
      [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> tanh(Var<T> a) {
  return detail::unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

/// Exact (erf-based) GELU.
template <class T>
Var<T> gelu(Var<T> a) {
  return detail::unary<T>(
      "gelu", a,
      [](T x) { return T(0.5) * x * (T{1} + std::erf(x * T(M_SQRT1_2))); },
      [](T x, T) {
        const T cdf = T(0.5) * (T{1} + std::erf(x * T(M_SQRT1_2)));
        const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
        return cdf + x * pdf;
      });
}

template <class T>
Var<T> log(Var<T> a) {
  for (const T& x : a.value())
    check(x > T{0}, "log: non-positive input", ErrorCode::kNonFinite);
  return detail::unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

/// x^p for x > 0.
template <class T>
Var<T> pow(Var<T> a, T p) {
  for (const T& x : a.value())
    check(x > T{0}, "pow: non-positive input", ErrorCode::kNonFinite);
  return detail::unary<T>(
      "pow", a, [p](T x) { return std::pow(x, p); },
      [p](T x, T) { return p * std::pow(x, p - T{1}); });
}

// ---------------------------------------------------------------------------
// Broadcasting helpers (last axis / row-wise)
// ---------------------------------------------------------------------------

/// a[..., n] + bias[n]
template <class T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  detail::same_tape(a, bias);
  const std::size_t n = bias.numel();
  check(!a.shape().empty() && a.shape().back() == n,
        "add_bias: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(bias.shape()),
        ErrorCode::kShapeMismatch);
  std::vector<T> out(a.value());
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id, ib = bias.id;
  return t.push("add_bias", a.shape(), std::move(out), t.needs(a) || t.needs(bias),
                [ia, ib, n](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.node(self).grad;
                  if (tp.node(ia).requires_grad) {
                    auto& d = tp.grad_buf(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                  }
                  if (tp.node(ib).requires_grad) {
                    auto& d = tp.grad_buf(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i];
                  }
                });
}

/// a[..., n] * gain[n]
template <class T>
Var<T> mul_last(Var<T> a, Var<T> gain) {
  detail::same_tape(a, gain);
  const std::size_t n = gain.numel();
  check(!a.shape().empty() && a.shape().back() == n,
        "mul_last: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(gain.shape()),
        ErrorCode::kShapeMismatch);
  std::vector<T> out(a.value());
  const auto& gv = gain.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= gv[i % n];
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id, ig = gain.id;
  return t.push("mul_last", a.shape(), std::move(out), t.needs(a) || t.needs(gain),
                [ia, ig, n](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.node(self).grad;
                  const auto& av = tp.node(ia).value;
                  const auto& gv2 = tp.node(ig).value;
                  if (tp.node(ia).requires_grad) {
                    auto& d = tp.grad_buf(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * gv2[i % n];
                  }
                  if (tp.node(ig).requires_grad) {
                    auto& d = tp.grad_buf(ig);
                    for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i] * av[i];
                  }
                });
}

/// a[m, n] * s[m] (s may be shaped [m] or [m, 1]).
template <class T>
Var<T> scale_rows(Var<T> a, Var<T> s) {
  detail::same_tape(a, s);
  detail::require_rank("scale_rows", a.shape(), 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  check(s.numel() == m, "scale_rows: shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(s.shape()),
        ErrorCode::kShapeMismatch);
  std::vector<T> out(a.value());
  const auto& sv = s.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= sv[i];
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id, is = s.id;
  return t.push("scale_rows", a.shape(), std::move(out), t.needs(a) || t.needs(s),
                [ia, is, m, n](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.node(self).grad;
                  const auto& av = tp.node(ia).value;
                  const auto& sv2 = tp.node(is).value;
                  if (tp.node(ia).requires_grad) {
                    auto& d = tp.grad_buf(ia);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[i * n + j] * sv2[i];
                  }
                  if (tp.node(is).requires_grad) {
                    auto& d = tp.grad_buf(is);
                    for (std::size_t i = 0; i < m; ++i) {
                      T acc{};
                      for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * av[i * n + j];
                      d[i] += acc;
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Linear algebra and convolution
// ---------------------------------------------------------------------------

/// [m, k] x [k, n] -> [m, n]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::same_tape(a, b);
  detail::require_rank("matmul", a.shape(), 2);
  detail::require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw Error("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()),
                ErrorCode::kShapeMismatch);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<T> out(m * n, T{});
  for (std::size_t i = 0; i < m; ++i) {
    T* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T x = av[i * k + p];
      const T* br = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += x * br[j];
    }
  }
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t.push("matmul", {m, n}, std::move(out), t.needs(a) || t.needs(b),
                [ia, ib, m, k, n](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.node(self).grad;
                  const auto& av2 = tp.node(ia).value;
                  const auto& bv2 = tp.node(ib).value;
                  if (tp.node(ia).requires_grad) {
                    auto& d = tp.grad_buf(ia);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const T* gr = g.data() + i * n;
                        const T* br = bv2.data() + p * n;
                        T acc{};
                        for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
                        d[i * k + p] += acc;
                      }
                  }
                  if (tp.node(ib).requires_grad) {
                    auto& d = tp.grad_buf(ib);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const T x = av2[i * k + p];
                        const T* gr = g.data() + i * n;
                        T* dr = d.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) dr[j] += x * gr[j];
                      }
                  }
                });
}

template <class T>
Var<T> transpose(Var<T> a) {
  detail::require_rank("transpose", a.shape(), 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto& av = a.value();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const std::size_t ia = a.id;
  return a.tape->push("transpose", {n, m}, std::move(out), a.tape->needs(a),
                      [ia, m, n](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        auto& d = tp.grad_buf(ia);
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[j * m + i];
                      });
}

/// x[c_in, t] conv w[c_out, c_in, k] + b[c_out], given stride, no padding or
/// dilation -> [c_out, (t - k) / stride + 1]
template <class T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride) {
  detail::same_tape(x, w);
  detail::same_tape(x, b);
  detail::require_rank("conv1d", x.shape(), 2);
  detail::require_rank("conv1d", w.shape(), 3);
  const std::size_t cin = x.dim(0), len = x.dim(1);
  const std::size_t cout = w.dim(0), kw = w.dim(2);
  if (w.dim(1) != cin || b.numel() != cout)
    throw Error("conv1d: shape mismatch input " + shape_str(x.shape()) + " weight " +
                    shape_str(w.shape()) + " bias " + shape_str(b.shape()),
                ErrorCode::kShapeMismatch);
  check(stride >= 1, "conv1d: stride must be >= 1");
  if (len < kw)
    throw Error("conv1d: input length " + std::to_string(len) + " shorter than kernel " +
                    std::to_string(kw),
                ErrorCode::kShapeMismatch);
  const std::size_t tout = (len - kw) / stride + 1;
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  std::vector<T> out(cout * tout);
  for (std::size_t o = 0; o < cout; ++o) {
    T* orow = out.data() + o * tout;
    std::fill(orow, orow + tout, bv[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const T* xr = xv.data() + c * len;
      const T* wr = wv.data() + (o * cin + c) * kw;
      for (std::size_t t = 0; t < tout; ++t) {
        const T* xs = xr + t * stride;
        T acc{};
        for (std::size_t k = 0; k < kw; ++k) acc += wr[k] * xs[k];
        orow[t] += acc;
      }
    }
  }
  Tape<T>& tp0 = *x.tape;
  const std::size_t ix = x.id, iw = w.id, ib = b.id;
  const bool req = tp0.needs(x) || tp0.needs(w) || tp0.needs(b);
  return tp0.push("conv1d", {cout, tout}, std::move(out), req,
                  [=](Tape<T>& tp, std::size_t self) {
                    const auto& g = tp.node(self).grad;
                    const auto& xv2 = tp.node(ix).value;
                    const auto& wv2 = tp.node(iw).value;
                    if (tp.node(ib).requires_grad) {
                      auto& d = tp.grad_buf(ib);
                      for (std::size_t o = 0; o < cout; ++o)
                        for (std::size_t t = 0; t < tout; ++t) d[o] += g[o * tout + t];
                    }
                    const bool dx = tp.node(ix).requires_grad;
                    const bool dw = tp.node(iw).requires_grad;
                    if (!dx && !dw) return;
                    T* gx = dx ? tp.grad_buf(ix).data() : nullptr;
                    T* gw = dw ? tp.grad_buf(iw).data() : nullptr;
                    for (std::size_t o = 0; o < cout; ++o)
                      for (std::size_t c = 0; c < cin; ++c) {
                        const std::size_t wo = (o * cin + c) * kw;
                        for (std::size_t t = 0; t < tout; ++t) {
                          const T go = g[o * tout + t];
                          const std::size_t xo = c * len + t * stride;
                          for (std::size_t k = 0; k < kw; ++k) {
                            if (gw) gw[wo + k] += go * xv2[xo + k];
                            if (gx) gx[xo + k] += go * wv2[wo + k];
                          }
                        }
                      }
                  });
}

// ---------------------------------------------------------------------------
// Axis reductions and normalisations
// ---------------------------------------------------------------------------

template <class T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  const auto s = detail::split_axis(a.shape(), axis);
  const auto& av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T mx = av[base];
      for (std::size_t i = 1; i < s.n; ++i) mx = std::max(mx, av[base + i * s.inner]);
      T sum{};
      for (std::size_t i = 0; i < s.n; ++i) {
        const T e = std::exp(av[base + i * s.inner] - mx);
        out[base + i * s.inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] /= sum;
    }
  const std::size_t ia = a.id;
  return a.tape->push("softmax", a.shape(), std::move(out), a.tape->needs(a),
                      [ia, s](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        const auto& y = tp.node(self).value;
                        auto& d = tp.grad_buf(ia);
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t in = 0; in < s.inner; ++in) {
                            const std::size_t base = o * s.n * s.inner + in;
                            T dot{};
                            for (std::size_t i = 0; i < s.n; ++i)
                              dot += g[base + i * s.inner] * y[base + i * s.inner];
                            for (std::size_t i = 0; i < s.n; ++i) {
                              const std::size_t k = base + i * s.inner;
                              d[k] += y[k] * (g[k] - dot);
                            }
                          }
                      });
}

template <class T>
Var<T> log_softmax(Var<T> a, std::size_t axis) {
  const auto s = detail::split_axis(a.shape(), axis);
  const auto& av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T mx = av[base];
      for (std::size_t i = 1; i < s.n; ++i) mx = std::max(mx, av[base + i * s.inner]);
      T sum{};
      for (std::size_t i = 0; i < s.n; ++i) sum += std::exp(av[base + i * s.inner] - mx);
      const T lse = mx + std::log(sum);
      for (std::size_t i = 0; i < s.n; ++i)
        out[base + i * s.inner] = av[base + i * s.inner] - lse;
    }
  const std::size_t ia = a.id;
  return a.tape->push("log_softmax", a.shape(), std::move(out), a.tape->needs(a),
                      [ia, s](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        const auto& y = tp.node(self).value;
                        auto& d = tp.grad_buf(ia);
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t in = 0; in < s.inner; ++in) {
                            const std::size_t base = o * s.n * s.inner + in;
                            T gsum{};
                            for (std::size_t i = 0; i < s.n; ++i) gsum += g[base + i * s.inner];
                            for (std::size_t i = 0; i < s.n; ++i) {
                              const std::size_t k = base + i * s.inner;
                              d[k] += g[k] - std::exp(y[k]) * gsum;
                            }
                          }
                      });
}

/// (x - mean) / sqrt(var + eps) along `axis`; no affine part.
template <class T>
Var<T> layernorm(Var<T> a, std::size_t axis, T eps = T(1e-5)) {
  const auto s = detail::split_axis(a.shape(), axis);
  const auto& av = a.value();
  std::vector<T> out(av.size());
  std::vector<T> inv_std(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T mean{};
      for (std::size_t i = 0; i < s.n; ++i) mean += av[base + i * s.inner];
      mean /= static_cast<T>(s.n);
      T var{};
      for (std::size_t i = 0; i < s.n; ++i) {
        const T dlt = av[base + i * s.inner] - mean;
        var += dlt * dlt;
      }
      var /= static_cast<T>(s.n);
      const T r = T{1} / std::sqrt(var + eps);
      inv_std[o * s.inner + in] = r;
      for (std::size_t i = 0; i < s.n; ++i)
        out[base + i * s.inner] = (av[base + i * s.inner] - mean) * r;
    }
  const std::size_t ia = a.id;
  return a.tape->push("layernorm", a.shape(), std::move(out), a.tape->needs(a),
                      [ia, s, inv_std = std::move(inv_std)](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        const auto& y = tp.node(self).value;
                        auto& d = tp.grad_buf(ia);
                        const T n = static_cast<T>(s.n);
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t in = 0; in < s.inner; ++in) {
                            const std::size_t base = o * s.n * s.inner + in;
                            T gm{}, gy{};
                            for (std::size_t i = 0; i < s.n; ++i) {
                              const std::size_t k = base + i * s.inner;
                              gm += g[k];
                              gy += g[k] * y[k];
                            }
                            gm /= n;
                            gy /= n;
                            const T r = inv_std[o * s.inner + in];
                            for (std::size_t i = 0; i < s.n; ++i) {
                              const std::size_t k = base + i * s.inner;
                              d[k] += r * (g[k] - gm - y[k] * gy);
                            }
                          }
                      });
}

/// x / ||x|| along `axis`.
template <class T>
Var<T> l2_normalize(Var<T> a, std::size_t axis) {
  const auto s = detail::split_axis(a.shape(), axis);
  const auto& av = a.value();
  std::vector<T> out(av.size());
  std::vector<T> norms(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T ss{};
      for (std::size_t i = 0; i < s.n; ++i) ss += av[base + i * s.inner] * av[base + i * s.inner];
      const T nrm = std::sqrt(ss);
      if (!(nrm > T{0})) throw Error("l2_normalize: zero-norm vector", ErrorCode::kNonFinite);
      norms[o * s.inner + in] = nrm;
      for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] = av[base + i * s.inner] / nrm;
    }
  const std::size_t ia = a.id;
  return a.tape->push("l2_normalize", a.shape(), std::move(out), a.tape->needs(a),
                      [ia, s, norms = std::move(norms)](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        const auto& y = tp.node(self).value;
                        auto& d = tp.grad_buf(ia);
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t in = 0; in < s.inner; ++in) {
                            const std::size_t base = o * s.n * s.inner + in;
                            T dot{};
                            for (std::size_t i = 0; i < s.n; ++i)
                              dot += g[base + i * s.inner] * y[base + i * s.inner];
                            const T nrm = norms[o * s.inner + in];
                            for (std::size_t i = 0; i < s.n; ++i) {
                              const std::size_t k = base + i * s.inner;
                              d[k] += (g[k] - y[k] * dot) / nrm;
                            }
                          }
                      });
}

/// Sum along `axis`; the axis is removed from the shape.
template <class T>
Var<T> sum(Var<T> a, std::size_t axis) {
  const auto s = detail::split_axis(a.shape(), axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto& av = a.value();
  std::vector<T> out(s.outer * s.inner, T{});
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += av[(o * s.n + i) * s.inner + in];
  const std::size_t ia = a.id;
  return a.tape->push("sum", std::move(shape), std::move(out), a.tape->needs(a),
                      [ia, s](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        auto& d = tp.grad_buf(ia);
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t i = 0; i < s.n; ++i)
                            for (std::size_t in = 0; in < s.inner; ++in)
                              d[(o * s.n + i) * s.inner + in] += g[o * s.inner + in];
                      });
}

template <class T>
Var<T> mean(Var<T> a, std::size_t axis) {
  const T n = static_cast<T>(a.shape().at(axis));
  return scale(sum(a, axis), T{1} / n);
}

template <class T>
Var<T> sum_all(Var<T> a) {
  T acc{};
  for (const T& x : a.value()) acc += x;
  const std::size_t ia = a.id;
  return a.tape->push("sum_all", {}, {acc}, a.tape->needs(a),
                      [ia](Tape<T>& tp, std::size_t self) {
                        const T g = tp.node(self).grad[0];
                        for (auto& d : tp.grad_buf(ia)) d += g;
                      });
}

template <class T>
Var<T> mean_all(Var<T> a) {
  return scale(sum_all(a), T{1} / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Shape manipulation and indexing
// ---------------------------------------------------------------------------

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  check(numel(shape) == a.numel(),
        "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape),
        ErrorCode::kShapeMismatch);
  const std::size_t ia = a.id;
  return a.tape->push("reshape", std::move(shape), a.value(), a.tape->needs(a),
                      [ia](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        auto& d = tp.grad_buf(ia);
                        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                      });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  check(!parts.empty(), "concat: no inputs");
  Tape<T>& t = *parts[0].tape;
  const Shape& ref = parts[0].shape();
  check(axis < ref.size(), "concat: axis out of range", ErrorCode::kShapeMismatch);
  Shape shape = ref;
  shape[axis] = 0;
  bool req = false;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    Shape a = p.shape(), b = ref;
    check(a.size() == b.size(), "concat: rank mismatch", ErrorCode::kShapeMismatch);
    a[axis] = b[axis] = 0;
    if (a != b)
      throw Error("concat: shape mismatch " + shape_str(ref) + " vs " + shape_str(p.shape()),
                  ErrorCode::kShapeMismatch);
    shape[axis] += p.shape()[axis];
    req = req || t.needs(p);
  }
  const auto s = detail::split_axis(shape, axis);
  std::vector<T> out(numel(shape));
  std::vector<std::size_t> ids, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * s.inner;
    const auto& pv = p.value();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.data() + o * w, w, out.data() + o * s.n * s.inner + off);
    off += w;
    ids.push_back(p.id);
    widths.push_back(w);
  }
  return t.push("concat", std::move(shape), std::move(out), req,
                [ids, widths, s](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.node(self).grad;
                  std::size_t off2 = 0;
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    const std::size_t w = widths[k];
                    if (tp.node(ids[k]).requires_grad) {
                      auto& d = tp.grad_buf(ids[k]);
                      for (std::size_t o = 0; o < s.outer; ++o)
                        for (std::size_t i = 0; i < w; ++i)
                          d[o * w + i] += g[o * s.n * s.inner + off2 + i];
                    }
                    off2 += w;
                  }
                });
}

/// Elements [begin, end) along `axis`.
template <class T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = detail::split_axis(a.shape(), axis);
  check(begin <= end && end <= s.n,
        "slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
            shape_str(a.shape()),
        ErrorCode::kShapeMismatch);
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const std::size_t w = (end - begin) * s.inner;
  const auto& av = a.value();
  std::vector<T> out(s.outer * w);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(av.data() + o * s.n * s.inner + begin * s.inner, w, out.data() + o * w);
  const std::size_t ia = a.id;
  return a.tape->push("slice", std::move(shape), std::move(out), a.tape->needs(a),
                      [ia, s, w, begin](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        auto& d = tp.grad_buf(ia);
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t i = 0; i < w; ++i)
                            d[o * s.n * s.inner + begin * s.inner + i] += g[o * w + i];
                      });
}

/// Embedding lookup: rows of table[v, e] -> [indices.size(), e].
template <class T>
Var<T> gather_rows(Var<T> table, std::vector<std::size_t> indices) {
  detail::require_rank("gather_rows", table.shape(), 2);
  const std::size_t v = table.dim(0), e = table.dim(1);
  const auto& tv = table.value();
  std::vector<T> out(indices.size() * e);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    check(indices[i] < v,
          "gather_rows: index " + std::to_string(indices[i]) + " out of range " +
              std::to_string(v),
          ErrorCode::kShapeMismatch);
    std::copy_n(tv.data() + indices[i] * e, e, out.data() + i * e);
  }
  const std::size_t it = table.id;
  const std::size_t n = indices.size();
  return table.tape->push("gather_rows", {n, e}, std::move(out), table.tape->needs(table),
                          [it, e, idx = std::move(indices)](Tape<T>& tp, std::size_t self) {
                            const auto& g = tp.node(self).grad;
                            auto& d = tp.grad_buf(it);
                            for (std::size_t i = 0; i < idx.size(); ++i)
                              for (std::size_t j = 0; j < e; ++j) d[idx[i] * e + j] += g[i * e + j];
                          });
}

/// out[i] = a[i, indices[i]] for a[m, n].
template <class T>
Var<T> pick(Var<T> a, std::vector<std::size_t> indices) {
  detail::require_rank("pick", a.shape(), 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  check(indices.size() == m, "pick: need one index per row", ErrorCode::kShapeMismatch);
  const auto& av = a.value();
  std::vector<T> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    check(indices[i] < n, "pick: index out of range", ErrorCode::kShapeMismatch);
    out[i] = av[i * n + indices[i]];
  }
  const std::size_t ia = a.id;
  return a.tape->push("pick", {m}, std::move(out), a.tape->needs(a),
                      [ia, n, idx = std::move(indices)](Tape<T>& tp, std::size_t self) {
                        const auto& g = tp.node(self).grad;
                        auto& d = tp.grad_buf(ia);
                        for (std::size_t i = 0; i < idx.size(); ++i) d[i * n + idx[i]] += g[i];
                      });
}

/// Copy of x[m, n] whose listed rows are replaced by row[n]. Other rows are
/// copied verbatim.
template <class T>
Var<T> replace_rows(Var<T> x, const std::vector<std::size_t>& rows, Var<T> row) {
  detail::same_tape(x, row);
  detail::require_rank("replace_rows", x.shape(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  check(row.numel() == n, "replace_rows: row width mismatch", ErrorCode::kShapeMismatch);
  std::vector<char> hit(m, 0);
  for (std::size_t r : rows) {
    check(r < m, "replace_rows: index " + std::to_string(r) + " out of range " + std::to_string(m),
          ErrorCode::kShapeMismatch);
    hit[r] = 1;
  }
  std::vector<T> out(x.value());
  const auto& rv = row.value();
  for (std::size_t r = 0; r < m; ++r)
    if (hit[r]) std::copy_n(rv.data(), n, out.data() + r * n);
  Tape<T>& t = *x.tape;
  const std::size_t ix = x.id, ir = row.id;
  return t.push("replace_rows", x.shape(), std::move(out), t.needs(x) || t.needs(row),
                [ix, ir, m, n, hit = std::move(hit)](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.node(self).grad;
                  if (tp.node(ix).requires_grad) {
                    auto& d = tp.grad_buf(ix);
                    for (std::size_t r = 0; r < m; ++r)
                      if (!hit[r])
                        for (std::size_t j = 0; j < n; ++j) d[r * n + j] += g[r * n + j];
                  }
                  if (tp.node(ir).requires_grad) {
                    auto& d = tp.grad_buf(ir);
                    for (std::size_t r = 0; r < m; ++r)
                      if (hit[r])
                        for (std::size_t j = 0; j < n; ++j) d[j] += g[r * n + j];
                  }
                });
}

/// a.b / (|a||b|) for two vectors of equal length.
template <class T>
Var<T> cosine_similarity(Var<T> a, Var<T> b) {
  check(a.numel() == b.numel(), "cosine_similarity: length mismatch", ErrorCode::kShapeMismatch);
  auto norm_of = [](const std::vector<T>& v) {
    T s{};
    for (const T& x : v) s += x * x;
    return s;
  };
  if (!(norm_of(a.value()) > T{0}) || !(norm_of(b.value()) > T{0}))
    throw Error("cosine similarity undefined for a zero-norm vector", ErrorCode::kInvalidArgument);
  const Shape flat{a.numel()};
  return sum_all(mul(l2_normalize(reshape(a, flat), 0), l2_normalize(reshape(b, flat), 0)));
}

// ---------------------------------------------------------------------------
// Recurrence
// ---------------------------------------------------------------------------

/// LSTM over a whole sequence. `xw[t, 4h]` holds the input contribution
/// (x_t W_x + b) with gate blocks ordered input, forget, cell, output;
/// `wh[h, 4h]` is the recurrent matrix. Zero initial state. With `reverse`
/// the sequence is consumed from the last frame to the first; output row t
/// is always the state after consuming frame t.
///
///   z = xw_t + h_prev wh
///   i = sig(z_i)  f = sig(z_f)  g = tanh(z_g)  o = sig(z_o)
///   c = f c_prev + i g,  h = o tanh(c)
template <class T>
Var<T> lstm(Var<T> xw, Var<T> wh, bool reverse) {
  detail::same_tape(xw, wh);
  detail::require_rank("lstm", xw.shape(), 2);
  detail::require_rank("lstm", wh.shape(), 2);
  const std::size_t steps = xw.dim(0), h = wh.dim(0);
  if (wh.dim(1) != 4 * h || xw.dim(1) != 4 * h)
    throw Error("lstm: shape mismatch " + shape_str(xw.shape()) + " vs " + shape_str(wh.shape()),
                ErrorCode::kShapeMismatch);
  const auto& xv = xw.value();
  const auto& wv = wh.value();
  // Per step: gate activations [4h] and cell state / tanh(cell) [h each].
  auto gates = std::make_shared<std::vector<T>>(steps * 4 * h);
  auto cells = std::make_shared<std::vector<T>>(steps * h);
  auto tcells = std::make_shared<std::vector<T>>(steps * h);
  std::vector<T> out(steps * h);
  std::vector<T> z(4 * h);
  auto frame = [=](std::size_t s) { return reverse ? steps - 1 - s : s; };
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = frame(s);
    std::copy_n(xv.data() + t * 4 * h, 4 * h, z.data());
    if (s > 0) {
      const T* hp = out.data() + frame(s - 1) * h;
      for (std::size_t p = 0; p < h; ++p) {
        const T x = hp[p];
        const T* wr = wv.data() + p * 4 * h;
        for (std::size_t j = 0; j < 4 * h; ++j) z[j] += x * wr[j];
      }
    }
    T* gt = gates->data() + t * 4 * h;
    for (std::size_t j = 0; j < h; ++j) {
      gt[j] = detail::sigmoid_scalar(z[j]);
      gt[h + j] = detail::sigmoid_scalar(z[h + j]);
      gt[2 * h + j] = std::tanh(z[2 * h + j]);
      gt[3 * h + j] = detail::sigmoid_scalar(z[3 * h + j]);
      const T cp = s > 0 ? (*cells)[frame(s - 1) * h + j] : T{};
      const T c = gt[h + j] * cp + gt[j] * gt[2 * h + j];
      (*cells)[t * h + j] = c;
      (*tcells)[t * h + j] = std::tanh(c);
      out[t * h + j] = gt[3 * h + j] * (*tcells)[t * h + j];
    }
  }
  Tape<T>& tp0 = *xw.tape;
  const std::size_t ix = xw.id, iw = wh.id;
  return tp0.push(
      "lstm", {steps, h}, std::move(out), tp0.needs(xw) || tp0.needs(wh),
      [=](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.node(self).grad;
        const auto& hv = tp.node(self).value;
        const auto& w2 = tp.node(iw).value;
        const bool dx = tp.node(ix).requires_grad, dw = tp.node(iw).requires_grad;
        T* gx = dx ? tp.grad_buf(ix).data() : nullptr;
        T* gw = dw ? tp.grad_buf(iw).data() : nullptr;
        std::vector<T> dh_next(h, T{}), dc_next(h, T{}), dz(4 * h);
        for (std::size_t s = steps; s-- > 0;) {
          const std::size_t t = frame(s);
          const T* gt = gates->data() + t * 4 * h;
          for (std::size_t j = 0; j < h; ++j) {
            const T i = gt[j], f = gt[h + j], cg = gt[2 * h + j], o = gt[3 * h + j];
            const T tc = (*tcells)[t * h + j];
            const T cp = s > 0 ? (*cells)[frame(s - 1) * h + j] : T{};
            const T dh = g[t * h + j] + dh_next[j];
            const T dc = dh * o * (T{1} - tc * tc) + dc_next[j];
            dz[j] = dc * cg * i * (T{1} - i);
            dz[h + j] = dc * cp * f * (T{1} - f);
            dz[2 * h + j] = dc * i * (T{1} - cg * cg);
            dz[3 * h + j] = dh * tc * o * (T{1} - o);
            dc_next[j] = dc * f;
          }
          if (gx)
            for (std::size_t j = 0; j < 4 * h; ++j) gx[t * 4 * h + j] += dz[j];
          std::fill(dh_next.begin(), dh_next.end(), T{});
          if (s == 0) continue;
          const T* hp = hv.data() + frame(s - 1) * h;
          for (std::size_t p = 0; p < h; ++p) {
            const T* wr = w2.data() + p * 4 * h;
            T acc{};
            for (std::size_t j = 0; j < 4 * h; ++j) acc += dz[j] * wr[j];
            dh_next[p] = acc;
            if (gw) {
              T* gr = gw + p * 4 * h;
              const T x = hp[p];
              for (std::size_t j = 0; j < 4 * h; ++j) gr[j] += x * dz[j];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Optimiser
// ---------------------------------------------------------------------------

template <class T>
struct AdamState {
  std::vector<T> m, v;
};

/// One bias-corrected Adam update; `step_index` counts from 1.
template <class T>
void adam_step(Parameter<T>& p, AdamState<T>& state, double lr, double beta1, double beta2,
               double eps, std::size_t step_index) {
  if (state.m.size() != p.size()) {
    state.m.assign(p.size(), T{});
    state.v.assign(p.size(), T{});
  }
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_index));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_index));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double g = static_cast<double>(p.grad[i]);
    const double m = beta1 * static_cast<double>(state.m[i]) + (1.0 - beta1) * g;
    const double v = beta2 * static_cast<double>(state.v[i]) + (1.0 - beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double mhat = m / c1, vhat = v / c2;
    p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - lr * mhat / (std::sqrt(vhat) + eps));
  }
}

template <class T>
class Adam {
 public:
  explicit Adam(std::vector<Parameter<T>*> params, double beta1 = 0.9, double beta2 = 0.98,
                double eps = 1e-8)
      : params_(std::move(params)), state_(params_.size()), beta1_(beta1), beta2_(beta2),
        eps_(eps) {}

  void step(double lr) {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i)
      adam_step(*params_[i], state_[i], lr, beta1_, beta2_, eps_, step_);
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::size_t steps() const { return step_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<AdamState<T>> state_;
  double beta1_, beta2_, eps_;
  std::size_t step_ = 0;
};

/// Rescales gradients so their global L2 norm is at most max_norm; returns
/// the norm before clipping.
template <class T>
double clip_grad_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
  double ss = 0.0;
  for (auto* p : params)
    for (const T& g : p->grad) ss += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const double c = max_norm / norm;
    for (auto* p : params)
      for (T& g : p->grad) g = static_cast<T>(static_cast<double>(g) * c);
  }
  return norm;
}

}  // namespace sslse::ad
