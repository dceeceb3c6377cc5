// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "sslse/gradcheck.hpp"
#include "sslse/objectives.hpp"

using namespace sslse;
using Catch::Approx;

namespace {

std::vector<double> uniform_values(std::size_t n, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

Matrix<double> uniform_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1,
                              double hi = 1) {
  Matrix<double> m(r, c);
  m.data = uniform_values(r * c, seed, lo, hi);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

TEST_CASE("mask coverage matches an independent Monte-Carlo estimate", "[objectives][mask]") {
  const std::size_t frames = 100, span = 10, trials = 10000;
  const double p = 0.065;
  double ours = 0.0;
  for (std::size_t k = 0; k < trials; ++k)
    ours += static_cast<double>(gen_mask_spans(frames, p, span, k).size()) / frames;
  ours /= trials;

  // Oracle: the same span process simulated with an unrelated generator.
  std::mt19937_64 gen(12345);
  std::bernoulli_distribution start(p);
  double oracle = 0.0;
  for (std::size_t k = 0; k < trials; ++k) {
    std::vector<int> hit(frames, 0);
    for (std::size_t i = 0; i < frames; ++i)
      if (start(gen))
        for (std::size_t j = i; j < std::min(frames, i + span); ++j) hit[j] = 1;
    double c = 0;
    for (int h : hit) c += h;
    oracle += c / frames;
  }
  oracle /= trials;
  REQUIRE(std::abs(ours - oracle) < 0.03);
  // Frame i is covered unless none of the min(i + 1, span) preceding starts fired.
  double analytic = 0.0;
  for (std::size_t i = 0; i < frames; ++i)
    analytic += 1.0 - std::pow(1.0 - p, static_cast<double>(std::min(i + 1, span)));
  analytic /= frames;
  REQUIRE(std::abs(ours - analytic) < 0.03);
}

TEST_CASE("mask spans are deterministic and well formed", "[objectives][mask]") {
  const auto a = gen_mask_spans(80, 0.1, 5, 7);
  REQUIRE(a.indices == gen_mask_spans(80, 0.1, 5, 7).indices);
  for (std::size_t i = 1; i < a.size(); ++i) REQUIRE(a.indices[i] > a.indices[i - 1]);
  for (std::size_t i : a.indices) REQUIRE(i < 80);
  REQUIRE(gen_mask_spans(12, 1.0, 12, 3).size() == 12);
  const auto m = gen_nonempty_mask(3, 0.01, 1, 0);
  REQUIRE_FALSE(m.empty());
}

// ---------------------------------------------------------------------------
// Quantizer
// ---------------------------------------------------------------------------

TEST_CASE("k-means recovers two separated clouds", "[objectives][kmeans]") {
  Rng rng(1);
  const std::size_t per = 50, dim = 80;
  Matrix<double> x(2 * per, dim);
  std::vector<double> mean_a(dim, 0.0), mean_b(dim, 0.0);
  for (std::size_t i = 0; i < 2 * per; ++i)
    for (std::size_t k = 0; k < dim; ++k) {
      const double v = (i < per ? -5.0 : 5.0) + rng.uniform(-0.5, 0.5);
      x(i, k) = v;
      (i < per ? mean_a : mean_b)[k] += v / per;
    }
  std::vector<double> hist;
  const auto cb = kmeans_quantize(x, 2, 50, 3, &hist);
  const auto z = assign(x, cb);
  const std::size_t ca = z[0];
  for (std::size_t i = 0; i < 2 * per; ++i) REQUIRE(z[i] == (i < per ? ca : 1 - ca));
  for (std::size_t k = 0; k < dim; ++k) {
    REQUIRE(std::abs(cb.centroids(ca, k) - mean_a[k]) < 1e-6);
    REQUIRE(std::abs(cb.centroids(1 - ca, k) - mean_b[k]) < 1e-6);
  }
  REQUIRE(assign(x, cb) == z);
}

TEST_CASE("k-means objective never increases", "[objectives][kmeans]") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto x = uniform_matrix(300, 6, 10 + s);
    std::vector<double> hist;
    const auto cb = kmeans_quantize(x, 8, 30, s, &hist);
    REQUIRE(hist.size() >= 2);
    for (std::size_t i = 1; i < hist.size(); ++i) REQUIRE(hist[i] <= hist[i - 1] + 1e-9);
    const auto z = assign(x, cb);
    REQUIRE(assign(x, cb) == z);
    REQUIRE(kmeans_quantize(x, 8, 30, s).centroids == cb.centroids);
  }
  REQUIRE_THROWS_AS(kmeans_quantize(uniform_matrix(3, 2, 1), 4, 10, 0), Error);
}

TEST_CASE("assignment ties go to the lowest index", "[objectives][kmeans]") {
  QuantizerCodebook cb{3, Matrix<double>(3, 1)};
  cb.centroids.data = {1.0, -1.0, 1.0};
  Matrix<double> x(1, 1);
  x.data = {0.0};
  REQUIRE(assign(x, cb)[0] == 0);
}

// ---------------------------------------------------------------------------
// Classification loss
// ---------------------------------------------------------------------------

namespace {

// Head whose projection is the identity and whose class embeddings are the
// standard basis of R^C.
ClassificationHead<double> aligned_head(std::size_t C) {
  ClassificationHead<double> head(C, C, C, 0);
  auto& w = head.params.get("proj.weight");
  std::fill(w.value.begin(), w.value.end(), 0.0);
  for (std::size_t i = 0; i < C; ++i) w.value[i * C + i] = 1.0;
  auto& b = head.params.get("proj.bias");
  std::fill(b.value.begin(), b.value.end(), 0.0);
  auto& e = head.params.get("class_emb");
  std::fill(e.value.begin(), e.value.end(), 0.0);
  for (std::size_t i = 0; i < C; ++i) e.value[i * C + i] = 1.0;
  return head;
}

}  // namespace

TEST_CASE("orthonormal alignment gives the closed-form loss", "[objectives][classification]") {
  for (std::size_t C : {2u, 4u, 64u}) {
    auto head = aligned_head(C);
    const std::size_t frames = 12;
    std::vector<std::size_t> z(frames);
    std::vector<double> h(frames * C, 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
      z[t] = (t * 7 + 3) % C;
      h[t * C + z[t]] = 1.0;
    }
    MaskSpec mask;
    mask.indices = {0, 2, 3, 7, 11};
    Tape<double> tape;
    const double loss =
        classification_loss(tape, tape.constant({frames, C}, h), head, z, mask).item();
    const double expected = std::log(std::exp(10.0) + static_cast<double>(C - 1)) - 10.0;
    REQUIRE(std::abs(loss - expected) < 1e-9);
  }
  REQUIRE(std::log(std::exp(10.0) + 3.0) - 10.0 == Approx(1.3617e-4).epsilon(1e-3));
}

TEST_CASE("equal similarities give loss log C", "[objectives][classification]") {
  for (std::size_t C : {2u, 5u, 64u}) {
    ClassificationHead<double> head(6, 4, C, 1);
    auto& e = head.params.get("class_emb");
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < 4; ++j) e.value[c * 4 + j] = 0.3 + 0.1 * static_cast<double>(j);
    std::vector<std::size_t> z(5);
    for (std::size_t t = 0; t < 5; ++t) z[t] = t % C;
    MaskSpec mask;
    mask.indices = {0, 1, 2, 3, 4};
    Tape<double> tape;
    const double loss =
        classification_loss(tape, tape.constant({5, 6}, uniform_values(30, 2)), head, z, mask)
            .item();
    REQUIRE(std::abs(loss - std::log(static_cast<double>(C))) < 1e-9);
  }
}

TEST_CASE("class probabilities form a distribution", "[objectives][classification]") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    ClassificationHead<double> head(8, 6, 16, s);
    Tape<double> tape;
    const auto p = classification_probs(tape, head, tape.constant({7, 8}, uniform_values(56, s)));
    for (std::size_t r = 0; r < 7; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 16; ++c) sum += p.value()[r * 16 + c];
      REQUIRE(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("temperature keeps the argmax and sharpens the winner", "[objectives][classification]") {
  ClassificationHead<double> head(8, 6, 10, 4);
  const auto h = uniform_values(8, 5);
  auto top = [&](double tau) {
    head.tau = tau;
    Tape<double> tape;
    const auto p = classification_probs(tape, head, tape.constant({1, 8}, h)).value();
    const auto it = std::max_element(p.begin(), p.end());
    return std::pair{static_cast<std::size_t>(it - p.begin()), *it};
  };
  const auto ref = top(0.1);
  double prev = 0.0;
  for (double tau : {2.0, 1.0, 0.5, 0.1, 0.05}) {
    const auto [arg, prob] = top(tau);
    REQUIRE(arg == ref.first);
    REQUIRE(prob > prev);
    prev = prob;
  }
}

TEST_CASE("empty mask is rejected", "[objectives]") {
  ClassificationHead<double> ch(4, 4, 3, 0);
  RegressionHead<double> rh(4, 80, 0);
  Tape<double> tape;
  auto h = tape.constant({3, 4}, uniform_values(12, 1));
  REQUIRE_THROWS_WITH(classification_loss(tape, h, ch, {0, 1, 2}, MaskSpec{}), "no masked frames");
  REQUIRE_THROWS_WITH(regression_loss(tape, h, rh, Matrix<double>(3, 80), MaskSpec{}),
                      "no masked frames");
}

// ---------------------------------------------------------------------------
// Regression loss
// ---------------------------------------------------------------------------

TEST_CASE("regression loss examples", "[objectives][regression]") {
  RegressionHead<double> head(5, 80, 6);
  const std::size_t frames = 9;
  const auto h = uniform_values(frames * 5, 7);
  Tape<double> tape;
  auto hv = tape.constant({frames, 5}, h);
  auto pred = affine(tape, hv, head.params.get("proj.weight"), head.params.get("proj.bias"), false);
  Matrix<double> target(frames, 80);
  target.data = pred.value();
  MaskSpec mask;
  mask.indices = {1, 4, 5};
  REQUIRE(regression_loss(tape, hv, head, target, mask).item() == 0.0);
  for (double delta : {0.25, -1.5}) {
    Matrix<double> shifted = target;
    for (auto& v : shifted.data) v -= delta;
    REQUIRE(regression_loss(tape, hv, head, shifted, mask).item() ==
            Approx(delta * delta).epsilon(1e-12));
  }
  REQUIRE_THROWS_AS(regression_loss(tape, hv, head, Matrix<double>(frames, 40), mask), Error);
}

TEST_CASE("pre-training losses ignore unmasked frames bit for bit", "[objectives][locality]") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    const std::size_t frames = 20 + s % 7, d = 8, C = 6;
    const auto mask = gen_nonempty_mask(frames, 0.1, 3, s);
    std::vector<char> is_masked(frames, 0);
    for (std::size_t i : mask.indices) is_masked[i] = 1;
    auto h = uniform_values(frames * d, 1000 + s);
    std::vector<std::size_t> z(frames);
    for (auto& v : z) v = static_cast<std::size_t>(rng.uniform_int(0, C - 1));
    auto target = uniform_matrix(frames, 80, 2000 + s);
    ClassificationHead<double> ch(d, 5, C, s);
    RegressionHead<double> rh(d, 80, s);
    auto losses = [&](const std::vector<double>& hh, const std::vector<std::size_t>& zz,
                      const Matrix<double>& tg) {
      Tape<double> tape;
      auto hv = tape.constant({frames, d}, hh);
      return std::pair{classification_loss(tape, hv, ch, zz, mask).item(),
                       regression_loss(tape, hv, rh, tg, mask).item()};
    };
    const auto before = losses(h, z, target);
    for (std::size_t t = 0; t < frames; ++t) {
      if (is_masked[t]) continue;
      for (std::size_t j = 0; j < d; ++j) h[t * d + j] += rng.uniform(-10, 10);
      z[t] = (z[t] + 1) % C;
      for (std::size_t j = 0; j < 80; ++j) target(t, j) = rng.uniform(-50, 50);
    }
    const auto after = losses(h, z, target);
    REQUIRE(after.first == before.first);
    REQUIRE(after.second == before.second);
  }
}

TEST_CASE("pre-training loss gradients", "[objectives][gradcheck]") {
  const std::size_t frames = 6, d = 5;
  MaskSpec mask;
  mask.indices = {0, 2, 3};
  const std::vector<std::size_t> z{1, 0, 2, 3, 1, 0};
  ClassificationHead<double> ch(d, 4, 4, 8);
  RegressionHead<double> rh(d, 80, 9);
  const auto target = uniform_matrix(frames, 80, 10);
  const std::vector<ad::TensorInit> in{{{frames, d}, uniform_values(frames * d, 11)}};
  auto r1 = ad::check_input_gradients("cls input", in,
                                      [&](Tape<double>& t, const std::vector<Var<double>>& v) {
                                        return classification_loss(t, v[0], ch, z, mask);
                                      });
  REQUIRE(r1.max_rel_error < 1e-4);
  auto r2 = ad::check_param_gradients("cls params", ch.params.all(), [&](Tape<double>& t) {
    return classification_loss(t, t.constant(in[0].shape, in[0].value), ch, z, mask);
  });
  REQUIRE(r2.max_rel_error < 1e-4);
  auto r3 = ad::check_input_gradients("reg input", in,
                                      [&](Tape<double>& t, const std::vector<Var<double>>& v) {
                                        return regression_loss(t, v[0], rh, target, mask);
                                      });
  REQUIRE(r3.max_rel_error < 1e-4);
  auto r4 = ad::check_param_gradients("reg params", rh.params.all(), [&](Tape<double>& t) {
    return regression_loss(t, t.constant(in[0].shape, in[0].value), rh, target, mask);
  });
  REQUIRE(r4.max_rel_error < 1e-4);
}

TEST_CASE("fbank targets align to SSL frames", "[objectives][regression]") {
  auto fb = uniform_matrix(98, 80, 12);
  const auto a = align_targets(fb, 2, 49);
  REQUIRE(a.rows == 49);
  for (std::size_t t = 0; t < 49; ++t) REQUIRE(a(t, 5) == fb(2 * t, 5));
  REQUIRE(align_targets(uniform_matrix(97, 80, 13), 2, 48).rows == 48);
  REQUIRE_THROWS_AS(align_targets(fb, 2, 60), Error);
}

// ---------------------------------------------------------------------------
// Restoration loss
// ---------------------------------------------------------------------------

TEST_CASE("restoration loss examples", "[objectives][restoration]") {
  const auto noisy = uniform_matrix(6, 9, 14, 0.0, 2.0);
  Tape<double> t;
  auto ones_logits = t.constant({6, 9}, std::vector<double>(54, 20.0));
  REQUIRE(signal_restoration_loss(t, ad::sigmoid(ones_logits), noisy, noisy).item() < 1e-4);
  const auto clean = uniform_matrix(6, 9, 15, 0.0, 1.0);
  double ms = 0.0;
  for (double v : clean.data) ms += v * v / 54.0;
  auto zero = t.constant({6, 9}, std::vector<double>(54, 0.0));
  REQUIRE(signal_restoration_loss(t, zero, noisy, clean).item() == Approx(ms).epsilon(1e-12));
  REQUIRE_THROWS_AS(signal_restoration_loss(t, zero, Matrix<double>(6, 8), clean), Error);
}

TEST_CASE("oracle mask beats zero and unit masks", "[objectives][restoration]") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto clean = uniform_matrix(5, 7, 100 + s, 0.0, 1.0);
    const auto noise = uniform_matrix(5, 7, 200 + s, 0.01, 1.0);
    Matrix<double> noisy = clean, oracle(5, 7), zeros(5, 7), ones(5, 7, 1.0);
    // Magnitudes of a sum with random phase offsets.
    Rng rng(s);
    for (std::size_t i = 0; i < noisy.data.size(); ++i) {
      const double ph = rng.uniform(0.0, 6.283185307179586);
      noisy.data[i] = std::abs(std::complex<double>(clean.data[i]) + std::polar(noise.data[i], ph));
      oracle.data[i] = std::clamp(clean.data[i] / std::max(noisy.data[i], 1e-10), 0.0, 1.0);
    }
    const double lo = restoration_loss_value(oracle, noisy, clean);
    REQUIRE(lo < restoration_loss_value(zeros, noisy, clean));
    REQUIRE(lo < restoration_loss_value(ones, noisy, clean));
  }
}

TEST_CASE("restoration loss is midpoint convex on [0,1] masks", "[objectives][restoration]") {
  const auto noisy = uniform_matrix(4, 6, 16, 0.0, 2.0);
  const auto clean = uniform_matrix(4, 6, 17, 0.0, 1.0);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto a = uniform_matrix(4, 6, 300 + s, 0.0, 1.0);
    const auto b = uniform_matrix(4, 6, 400 + s, 0.0, 1.0);
    Matrix<double> mid(4, 6);
    for (std::size_t i = 0; i < mid.data.size(); ++i) mid.data[i] = 0.5 * (a.data[i] + b.data[i]);
    const double fm = restoration_loss_value(mid, noisy, clean);
    const double avg =
        0.5 * (restoration_loss_value(a, noisy, clean) + restoration_loss_value(b, noisy, clean));
    REQUIRE(fm <= avg + 1e-12);
  }
}

TEST_CASE("restoration loss gradient", "[objectives][restoration][gradcheck]") {
  const auto noisy = uniform_matrix(4, 5, 18, 0.1, 2.0);
  const auto clean = uniform_matrix(4, 5, 19, 0.1, 1.0);
  for (double c : {1.0, 0.5}) {
    auto r = ad::check_input_gradients(
        "restoration", {{{4, 5}, uniform_values(20, 20)}},
        [&](Tape<double>& t, const std::vector<Var<double>>& v) {
          return signal_restoration_loss(t, ad::sigmoid(v[0]), noisy, clean, c);
        });
    REQUIRE(r.max_rel_error < 1e-4);
  }
}
