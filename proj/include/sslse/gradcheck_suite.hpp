// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Finite-difference checks for every tape op on random shapes, plus the
// composite networks and losses built on top of them.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sslse/gradcheck.hpp"

namespace sslse::ad {

struct OpCase {
  std::string name;
  // Draws random inputs for one instance.
  std::function<std::vector<TensorInit>(Rng&)> make;
  // Builds the op output from those inputs (projected to a scalar later).
  std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&, Rng&)> build;
};

namespace detail {

inline std::size_t dim_in(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo),
                                                  static_cast<std::int64_t>(hi)));
}

inline TensorInit rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  TensorInit t{std::move(shape), {}};
  t.value.resize(numel(t.shape));
  for (auto& x : t.value) x = rng.uniform(lo, hi);
  return t;
}

inline Shape rand_shape(Rng& rng, std::size_t min_rank = 1, std::size_t max_rank = 3) {
  Shape s(dim_in(rng, min_rank, max_rank));
  for (auto& d : s) d = dim_in(rng, 1, 5);
  return s;
}

}  // namespace detail

/// One entry per op exposed by autodiff.hpp.
inline std::vector<OpCase> op_cases() {
  using detail::dim_in;
  using detail::rand_shape;
  using detail::rand_tensor;
  using Vars = std::vector<Var<double>>;
  std::vector<OpCase> c;

  auto unary = [&](std::string name, double lo, double hi,
                   std::function<Var<double>(Var<double>)> f) {
    c.push_back({std::move(name),
                 [lo, hi](Rng& r) { return std::vector{rand_tensor(r, rand_shape(r), lo, hi)}; },
                 [f](Tape<double>&, const Vars& v, Rng&) { return f(v[0]); }});
  };
  auto binary = [&](std::string name, std::function<Var<double>(Var<double>, Var<double>)> f) {
    c.push_back({std::move(name),
                 [](Rng& r) {
                   const auto s = rand_shape(r);
                   return std::vector{rand_tensor(r, s), rand_tensor(r, s)};
                 },
                 [f](Tape<double>&, const Vars& v, Rng&) { return f(v[0], v[1]); }});
  };

  binary("add", [](auto a, auto b) { return add(a, b); });
  binary("sub", [](auto a, auto b) { return sub(a, b); });
  binary("mul", [](auto a, auto b) { return mul(a, b); });
  unary("scale", -1, 1, [](auto a) { return scale(a, -1.7); });
  unary("add_scalar", -1, 1, [](auto a) { return add_scalar(a, 0.3); });
  unary("sigmoid", -3, 3, [](auto a) { return sigmoid(a); });
  unary("tanh", -2, 2, [](auto a) { return tanh(a); });
  unary("gelu", -3, 3, [](auto a) { return gelu(a); });
  unary("log", 0.2, 2, [](auto a) { return log(a); });
  unary("pow", 0.2, 2, [](auto a) { return pow(a, 1.7); });
  unary("sum_all", -1, 1, [](auto a) { return sum_all(a); });
  unary("mean_all", -1, 1, [](auto a) { return mean_all(a); });

  auto last_axis = [&](std::string name, std::function<Var<double>(Var<double>, Var<double>)> f) {
    c.push_back({std::move(name),
                 [](Rng& r) {
                   const auto s = rand_shape(r);
                   return std::vector{rand_tensor(r, s), rand_tensor(r, {s.back()})};
                 },
                 [f](Tape<double>&, const Vars& v, Rng&) { return f(v[0], v[1]); }});
  };
  last_axis("add_bias", [](auto a, auto b) { return add_bias(a, b); });
  last_axis("mul_last", [](auto a, auto b) { return mul_last(a, b); });

  c.push_back({"scale_rows",
               [](Rng& r) {
                 const std::size_t m = dim_in(r, 1, 5), n = dim_in(r, 1, 5);
                 return std::vector{rand_tensor(r, {m, n}), rand_tensor(r, {m})};
               },
               [](Tape<double>&, const Vars& v, Rng&) { return scale_rows(v[0], v[1]); }});
  c.push_back({"matmul",
               [](Rng& r) {
                 const std::size_t m = dim_in(r, 1, 5), k = dim_in(r, 1, 5), n = dim_in(r, 1, 5);
                 return std::vector{rand_tensor(r, {m, k}), rand_tensor(r, {k, n})};
               },
               [](Tape<double>&, const Vars& v, Rng&) { return matmul(v[0], v[1]); }});
  c.push_back({"transpose",
               [](Rng& r) {
                 return std::vector{rand_tensor(r, {dim_in(r, 1, 5), dim_in(r, 1, 5)})};
               },
               [](Tape<double>&, const Vars& v, Rng&) { return transpose(v[0]); }});
  c.push_back({"conv1d",
               [](Rng& r) {
                 const std::size_t cin = dim_in(r, 1, 3), cout = dim_in(r, 1, 3);
                 const std::size_t k = dim_in(r, 1, 4), t = k + dim_in(r, 0, 9);
                 return std::vector{rand_tensor(r, {cin, t}), rand_tensor(r, {cout, cin, k}),
                                    rand_tensor(r, {cout})};
               },
               [](Tape<double>&, const Vars& v, Rng& r) {
                 return conv1d(v[0], v[1], v[2], dim_in(r, 1, 3));
               }});

  auto with_axis = [&](std::string name, double lo, double hi,
                       std::function<Var<double>(Var<double>, std::size_t)> f) {
    c.push_back({std::move(name),
                 [lo, hi](Rng& r) { return std::vector{rand_tensor(r, rand_shape(r), lo, hi)}; },
                 [f](Tape<double>&, const Vars& v, Rng& r) {
                   return f(v[0], dim_in(r, 0, v[0].shape().size() - 1));
                 }});
  };
  with_axis("softmax", -2, 2, [](auto a, auto ax) { return softmax(a, ax); });
  with_axis("log_softmax", -2, 2, [](auto a, auto ax) { return log_softmax(a, ax); });
  with_axis("sum", -1, 1, [](auto a, auto ax) { return sum(a, ax); });
  with_axis("mean", -1, 1, [](auto a, auto ax) { return mean(a, ax); });
  with_axis("l2_normalize", 0.1, 1, [](auto a, auto ax) { return l2_normalize(a, ax); });
  // Layer norm over a single element is constant; keep the axis at least 2 wide.
  c.push_back({"layernorm",
               [](Rng& r) {
                 auto s = rand_shape(r);
                 for (auto& d : s) d = std::max<std::size_t>(d, 2);
                 return std::vector{rand_tensor(r, s)};
               },
               [](Tape<double>&, const Vars& v, Rng& r) {
                 return layernorm(v[0], dim_in(r, 0, v[0].shape().size() - 1));
               }});

  c.push_back({"reshape",
               [](Rng& r) { return std::vector{rand_tensor(r, rand_shape(r))}; },
               [](Tape<double>&, const Vars& v, Rng&) { return reshape(v[0], {v[0].numel()}); }});
  c.push_back({"concat",
               [](Rng& r) {
                 const auto s = rand_shape(r, 2, 3);
                 auto s2 = s;
                 s2[1] = dim_in(r, 1, 4);
                 auto s3 = s;
                 s3[1] = dim_in(r, 1, 4);
                 return std::vector{rand_tensor(r, s), rand_tensor(r, s2), rand_tensor(r, s3)};
               },
               [](Tape<double>&, const Vars& v, Rng&) { return concat(v, 1); }});
  c.push_back({"slice",
               [](Rng& r) { return std::vector{rand_tensor(r, rand_shape(r))}; },
               [](Tape<double>&, const Vars& v, Rng& r) {
                 const std::size_t ax = dim_in(r, 0, v[0].shape().size() - 1);
                 const std::size_t n = v[0].dim(ax);
                 const std::size_t b = dim_in(r, 0, n - 1);
                 return slice(v[0], ax, b, dim_in(r, b + 1, n));
               }});
  c.push_back({"gather_rows",
               [](Rng& r) {
                 return std::vector{rand_tensor(r, {dim_in(r, 1, 6), dim_in(r, 1, 4)})};
               },
               [](Tape<double>&, const Vars& v, Rng& r) {
                 std::vector<std::size_t> idx(dim_in(r, 1, 8));
                 for (auto& i : idx) i = dim_in(r, 0, v[0].dim(0) - 1);
                 return gather_rows(v[0], idx);
               }});
  c.push_back({"pick",
               [](Rng& r) {
                 return std::vector{rand_tensor(r, {dim_in(r, 1, 6), dim_in(r, 1, 5)})};
               },
               [](Tape<double>&, const Vars& v, Rng& r) {
                 std::vector<std::size_t> idx(v[0].dim(0));
                 for (auto& i : idx) i = dim_in(r, 0, v[0].dim(1) - 1);
                 return pick(v[0], idx);
               }});
  c.push_back({"replace_rows",
               [](Rng& r) {
                 const std::size_t m = dim_in(r, 1, 6), n = dim_in(r, 1, 4);
                 return std::vector{rand_tensor(r, {m, n}), rand_tensor(r, {n})};
               },
               [](Tape<double>&, const Vars& v, Rng& r) {
                 std::vector<std::size_t> rows;
                 for (std::size_t i = 0; i < v[0].dim(0); ++i)
                   if (r.bernoulli(0.5)) rows.push_back(i);
                 return replace_rows(v[0], rows, v[1]);
               }});
  c.push_back({"cosine_similarity",
               [](Rng& r) {
                 const std::size_t n = dim_in(r, 2, 8);
                 return std::vector{rand_tensor(r, {n}), rand_tensor(r, {n})};
               },
               [](Tape<double>&, const Vars& v, Rng&) { return cosine_similarity(v[0], v[1]); }});
  c.push_back({"lstm",
               [](Rng& r) {
                 const std::size_t steps = dim_in(r, 1, 6), h = dim_in(r, 1, 4);
                 return std::vector{rand_tensor(r, {steps, 4 * h}), rand_tensor(r, {h, 4 * h})};
               },
               [](Tape<double>&, const Vars& v, Rng& r) {
                 return lstm(v[0], v[1], r.bernoulli(0.5));
               }});
  return c;
}

/// Worst relative error of one op over `instances` random draws.
inline GradCheckResult check_op(const OpCase& op, std::size_t instances, std::uint64_t seed) {
  GradCheckResult worst{op.name, 0.0, 0};
  for (std::size_t k = 0; k < instances; ++k) {
    const std::uint64_t s = derive_seed(seed, k);
    Rng draw(s);
    const auto inputs = op.make(draw);
    const std::uint64_t build_seed = derive_seed(s, 1);
    auto res = check_input_gradients(op.name, inputs,
                                     [&](Tape<double>& t, const std::vector<Var<double>>& v) {
                                       Rng r(build_seed);  // same choices on every evaluation
                                       return random_projection(op.build(t, v, r),
                                                                derive_seed(s, 2));
                                     });
    worst.max_rel_error = std::max(worst.max_rel_error, res.max_rel_error);
    worst.coords_checked += res.coords_checked;
  }
  return worst;
}

}  // namespace sslse::ad
