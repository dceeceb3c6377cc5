// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch_amalgamated.hpp>

#include <cmath>

#include "sslse/autodiff.hpp"
#include "sslse/gradcheck_suite.hpp"

using namespace sslse;
using namespace sslse::ad;
using Catch::Approx;

TEST_CASE("every op matches central differences on 20 random shapes", "[autodiff][gradcheck]") {
  for (const auto& op : op_cases()) {
    const auto res = check_op(op, 20, 2024);
    INFO(op.name << " max rel err " << res.max_rel_error);
    CHECK(res.coords_checked > 0);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("softmax of equal logits is uniform", "[autodiff]") {
  Tape<double> t;
  auto x = t.constant({4}, {0.7, 0.7, 0.7, 0.7});
  for (double p : softmax(x, 0).value()) REQUIRE(p == Approx(0.25).margin(1e-15));
}

TEST_CASE("gradient of sum of squares", "[autodiff]") {
  Tape<double> t;
  auto x = t.input({2}, {1.0, 2.0});
  t.backward(sum_all(mul(x, x)));
  REQUIRE(x.grad() == std::vector<double>{2.0, 4.0});
}

TEST_CASE("shape mismatch names op and shapes", "[autodiff][errors]") {
  Tape<double> t;
  auto a = t.constant({2, 3}, std::vector<double>(6, 1.0));
  auto b = t.constant({3, 2}, std::vector<double>(6, 1.0));
  REQUIRE_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("add") &&
                                     Catch::Matchers::ContainsSubstring("[2,3]") &&
                                     Catch::Matchers::ContainsSubstring("[3,2]"));
  REQUIRE_THROWS_WITH(matmul(a, a), Catch::Matchers::ContainsSubstring("matmul"));
}

TEST_CASE("non-finite output names the op", "[autodiff][errors]") {
  Tape<double> t;
  auto x = t.constant({2}, {1.0, 1e200});
  REQUIRE_THROWS_WITH(mul(x, x), "non-finite output in op mul");
  REQUIRE_THROWS_WITH(log(t.constant({1}, {0.0})), Catch::Matchers::ContainsSubstring("log"));
}

TEST_CASE("cosine similarity examples", "[autodiff]") {
  Tape<double> t;
  auto a = t.constant({3}, {1.0, -2.0, 0.5});
  REQUIRE(cosine_similarity(a, a).item() == Approx(1.0).epsilon(1e-15));
  auto e1 = t.constant({2}, {1.0, 0.0});
  auto e2 = t.constant({2}, {0.0, 1.0});
  REQUIRE(cosine_similarity(e1, e2).item() == 0.0);
  auto z = t.constant({2}, {0.0, 0.0});
  REQUIRE_THROWS_WITH(cosine_similarity(e1, z),
                      Catch::Matchers::ContainsSubstring("cosine similarity undefined"));
}

TEST_CASE("adam moves about lr on the first steps of a constant gradient", "[autodiff][adam]") {
  Parameter<double> p("w", {1});
  p.value[0] = 1.0;
  AdamState<double> st;
  const double lr = 0.01, b1 = 0.9, b2 = 0.98, eps = 1e-8, g = 0.3;
  // Hand-computed: with a constant gradient mhat == g and vhat == g^2 at every step.
  double expect = 1.0;
  for (std::size_t k = 1; k <= 2; ++k) {
    p.grad[0] = g;
    adam_step(p, st, lr, b1, b2, eps, k);
    const double m = g * (1.0 - std::pow(b1, k)), v = g * g * (1.0 - std::pow(b2, k));
    expect -= lr * (m / (1.0 - std::pow(b1, k))) / (std::sqrt(v / (1.0 - std::pow(b2, k))) + eps);
    REQUIRE(p.value[0] == Approx(expect).epsilon(1e-14));
  }
  REQUIRE(p.value[0] == Approx(1.0 - 2 * lr).epsilon(1e-6));

  Parameter<double> q("q", {3});
  q.value = {0.5, -1.0, 2.0};
  AdamState<double> sq;
  adam_step(q, sq, 0.1, b1, b2, eps, 1);
  REQUIRE(q.value == std::vector<double>{0.5, -1.0, 2.0});
}

TEST_CASE("training a tiny regression is deterministic", "[autodiff][adam]") {
  auto run = [] {
    Parameter<double> w("w", {3, 2});
    Parameter<double> b("b", {2});
    Rng rng(9);
    for (auto& x : w.value) x = rng.uniform(-1, 1);
    Adam<double> opt({&w, &b});
    for (int step = 0; step < 25; ++step) {
      opt.zero_grad();
      Tape<double> t;
      auto x = t.constant({4, 3}, {1, 2, 3, 0, 1, 0, -1, 0.5, 2, 3, 3, 1});
      auto y = add_bias(matmul(x, t.param(w)), t.param(b));
      auto loss = mean_all(mul(y, y));
      t.backward(loss);
      clip_grad_norm<double>({&w, &b}, 5.0);
      opt.step(0.05);
    }
    auto out = w.value;
    out.insert(out.end(), b.value.begin(), b.value.end());
    return out;
  };
  REQUIRE(run() == run());
}

TEST_CASE("parameters off the loss path receive zero gradient", "[autodiff]") {
  Parameter<double> used("used", {2}), unused("unused", {2}), frozen("frozen", {2});
  used.value = {1.0, 2.0};
  unused.value = {3.0, 4.0};
  frozen.value = {5.0, 6.0};
  Tape<double> t;
  auto u = t.param(used);
  auto side = t.param(unused);
  auto f = t.param(frozen, false);
  (void)tanh(side);
  t.backward(sum_all(mul(u, f)));
  REQUIRE(used.grad == std::vector<double>{5.0, 6.0});
  REQUIRE(unused.grad == std::vector<double>{0.0, 0.0});
  REQUIRE(frozen.grad == std::vector<double>{0.0, 0.0});
}

TEST_CASE("forward without backward is pure", "[autodiff]") {
  Parameter<double> w("w", {3, 3});
  Rng rng(4);
  for (auto& x : w.value) x = rng.uniform(-1, 1);
  auto fwd = [&] {
    Tape<double> t;
    auto x = t.constant({2, 3}, {0.1, 0.2, 0.3, -0.4, 0.5, 0.6});
    return softmax(gelu(matmul(x, t.param(w))), 1).value();
  };
  const auto a = fwd();
  REQUIRE(a == fwd());
  REQUIRE(w.grad == std::vector<double>(9, 0.0));
}

TEST_CASE("gradient clipping rescales to the target norm", "[autodiff]") {
  Parameter<double> a("a", {2});
  a.grad = {3.0, 4.0};
  REQUIRE(clip_grad_norm<double>({&a}, 1.0) == Approx(5.0));
  REQUIRE(a.grad[0] == Approx(0.6));
  REQUIRE(a.grad[1] == Approx(0.8));
}

TEST_CASE("single precision tape runs the same ops", "[autodiff]") {
  Tape<float> t;
  auto x = t.input({2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto y = layernorm(x, 1);
  t.backward(sum_all(mul(y, y)));
  REQUIRE(y.value()[0] == Approx(-1.0).margin(1e-4));
}
