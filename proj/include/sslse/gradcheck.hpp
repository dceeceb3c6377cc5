// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Central finite-difference verification of tape gradients (double only).

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sslse/autodiff.hpp"
#include "sslse/common.hpp"

namespace sslse::ad {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

struct TensorInit {
  Shape shape;
  std::vector<double> value;
};

/// Error of one gradient tensor: max |analytic - numeric| divided by the
/// larger of the two gradients' max magnitudes.
inline double relative_error(const std::vector<double>& analytic,
                             const std::vector<double>& numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  if (scale < 1e-12) return diff;  // both gradients vanish
  return diff / scale;
}

/// Coordinates to perturb: all of them, or a seeded sample of `limit`.
inline std::vector<std::size_t> pick_coords(std::size_t n, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (limit == 0 || limit >= n) return idx;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

using InputFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Checks d(loss)/d(input) for every input tensor.
inline GradCheckResult check_input_gradients(const std::string& name,
                                             const std::vector<TensorInit>& inputs,
                                             const InputFn& build, double eps = 1e-5,
                                             std::size_t max_coords = 0,
                                             std::uint64_t seed = 0) {
  auto evaluate = [&](const std::vector<TensorInit>& in, std::vector<std::vector<double>>* grads) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& ti : in) vars.push_back(tape.input(ti.shape, ti.value));
    Var<double> loss = build(tape, vars);
    const double value = loss.item();
    if (grads != nullptr) {
      tape.backward(loss);
      grads->clear();
      for (const auto& v : vars) {
        const auto& g = tape.node(v.id).grad;
        grads->push_back(g.empty() ? std::vector<double>(v.numel(), 0.0) : g);
      }
    }
    return value;
  };

  std::vector<std::vector<double>> analytic;
  evaluate(inputs, &analytic);
  GradCheckResult res{name, 0.0, 0};
  std::vector<TensorInit> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto coords = pick_coords(inputs[k].value.size(), max_coords, seed + k);
    std::vector<double> a, n;
    for (std::size_t c : coords) {
      const double orig = work[k].value[c];
      work[k].value[c] = orig + eps;
      const double fp = evaluate(work, nullptr);
      work[k].value[c] = orig - eps;
      const double fm = evaluate(work, nullptr);
      work[k].value[c] = orig;
      a.push_back(analytic[k][c]);
      n.push_back((fp - fm) / (2.0 * eps));
    }
    res.max_rel_error = std::max(res.max_rel_error, relative_error(a, n));
    res.coords_checked += coords.size();
  }
  return res;
}

using ParamFn = std::function<Var<double>(Tape<double>&)>;

/// Checks d(loss)/d(parameter) for every listed parameter.
inline GradCheckResult check_param_gradients(const std::string& name,
                                             const std::vector<Parameter<double>*>& params,
                                             const ParamFn& build, double eps = 1e-5,
                                             std::size_t max_coords = 0,
                                             std::uint64_t seed = 0) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(build(tape));
  }
  GradCheckResult res{name, 0.0, 0};
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<double>& p = *params[k];
    const auto coords = pick_coords(p.size(), max_coords, seed + k);
    std::vector<double> a, n;
    for (std::size_t c : coords) {
      const double orig = p.value[c];
      p.value[c] = orig + eps;
      double fp, fm;
      {
        Tape<double> tape;
        fp = build(tape).item();
      }
      p.value[c] = orig - eps;
      {
        Tape<double> tape;
        fm = build(tape).item();
      }
      p.value[c] = orig;
      a.push_back(p.grad[c]);
      n.push_back((fp - fm) / (2.0 * eps));
    }
    res.max_rel_error = std::max(res.max_rel_error, relative_error(a, n));
    res.coords_checked += coords.size();
  }
  for (auto* p : params) p->zero_grad();
  return res;
}

/// Reduces a tensor to a scalar through a fixed random projection, so every
/// output element contributes a distinct weight to the checked gradient.
template <class T>
Var<T> random_projection(Var<T> out, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<T> w(out.numel());
  for (auto& x : w) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  auto c = out.tape->constant(out.shape(), std::move(w));
  return sum_all(mul(out, c));
}

}  // namespace sslse::ad
