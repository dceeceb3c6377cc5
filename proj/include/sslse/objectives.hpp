// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Span masking, k-means targets, the masked classification and regression
// pre-training losses, and the magnitude-domain restoration loss.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sslse/autodiff.hpp"
#include "sslse/common.hpp"
#include "sslse/models.hpp"

namespace sslse {

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

struct MaskSpec {
  std::vector<std::size_t> indices;  // sorted, unique
  std::size_t span = 10;
  double start_prob = 0.065;

  bool empty() const { return indices.empty(); }
  std::size_t size() const { return indices.size(); }
};

/// Every frame starts a span of `span` frames with probability p; spans are
/// unioned and truncated at the sequence end.
inline MaskSpec gen_mask_spans(std::size_t frames, double p, std::size_t span, std::uint64_t seed) {
  check(frames >= 1, "gen_mask_spans: frames must be >= 1", ErrorCode::kInvalidArgument);
  check(p > 0.0 && p <= 1.0, "gen_mask_spans: p must be in (0, 1]", ErrorCode::kInvalidArgument);
  check(span >= 1, "gen_mask_spans: span must be >= 1", ErrorCode::kInvalidArgument);
  Rng rng(seed);
  std::vector<char> hit(frames, 0);
  for (std::size_t i = 0; i < frames; ++i)
    if (rng.bernoulli(p))
      for (std::size_t k = i; k < std::min(frames, i + span); ++k) hit[k] = 1;
  MaskSpec m;
  m.span = span;
  m.start_prob = p;
  for (std::size_t i = 0; i < frames; ++i)
    if (hit[i]) m.indices.push_back(i);
  return m;
}

/// gen_mask_spans retried with seed + 1, seed + 2, ... until non-empty.
inline MaskSpec gen_nonempty_mask(std::size_t frames, double p, std::size_t span,
                                  std::uint64_t seed) {
  for (std::uint64_t k = 0; k < 100000; ++k) {
    auto m = gen_mask_spans(frames, p, span, seed + k);
    if (!m.empty()) return m;
  }
  throw Error("could not draw a non-empty mask", ErrorCode::kInvalidArgument);
}

// ---------------------------------------------------------------------------
// Discrete targets
// ---------------------------------------------------------------------------

struct QuantizerCodebook {
  std::size_t C = 0;
  Matrix<double> centroids;  // C x dim
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Nearest centroid per row; ties go to the lowest index.
inline std::vector<std::size_t> assign(const Matrix<double>& features, const QuantizerCodebook& cb) {
  check(features.cols == cb.centroids.cols, "assign: feature width mismatch",
        ErrorCode::kShapeMismatch);
  std::vector<std::size_t> z(features.rows);
  for (std::size_t i = 0; i < features.rows; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cb.C; ++c) {
      const double d = detail::sq_dist(features.row(i), cb.centroids.row(c), features.cols);
      if (d < best) {
        best = d;
        z[i] = c;
      }
    }
  }
  return z;
}

inline double kmeans_objective(const Matrix<double>& features, const QuantizerCodebook& cb,
                               const std::vector<std::size_t>& z) {
  double s = 0.0;
  for (std::size_t i = 0; i < features.rows; ++i)
    s += detail::sq_dist(features.row(i), cb.centroids.row(z[i]), features.cols);
  return s;
}

/// Lloyd's algorithm from a seeded k-means++ start. An emptied cluster keeps
/// its previous centroid. `history`, if given, receives the objective after
/// every assignment step.
inline QuantizerCodebook kmeans_quantize(const Matrix<double>& features, std::size_t C,
                                         std::size_t iters, std::uint64_t seed,
                                         std::vector<double>* history = nullptr) {
  const std::size_t n = features.rows, dim = features.cols;
  check(C >= 2, "kmeans_quantize: need at least 2 classes", ErrorCode::kInvalidArgument);
  if (n < C)
    throw Error("kmeans_quantize: " + std::to_string(n) + " points for " + std::to_string(C) +
                    " classes",
                ErrorCode::kInvalidArgument);
  Rng rng(seed);
  QuantizerCodebook cb{C, Matrix<double>(C, dim)};
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
  for (std::size_t c = 0; c < C; ++c) {
    std::copy_n(features.row(pick), dim, cb.centroids.row(c));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], detail::sq_dist(features.row(i), cb.centroids.row(c), dim));
      total += d2[i];
    }
    if (c + 1 == C) break;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      continue;
    }
    const double target = rng.uniform() * total;
    double acc = 0.0;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc > target && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
  }

  std::vector<std::size_t> z = assign(features, cb);
  if (history) history->push_back(kmeans_objective(features, cb, z));
  for (std::size_t it = 0; it < iters; ++it) {
    Matrix<double> sums(C, dim);
    std::vector<std::size_t> counts(C, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[z[i]];
      for (std::size_t k = 0; k < dim; ++k) sums(z[i], k) += features(i, k);
    }
    for (std::size_t c = 0; c < C; ++c)
      if (counts[c] > 0)
        for (std::size_t k = 0; k < dim; ++k)
          cb.centroids(c, k) = sums(c, k) / static_cast<double>(counts[c]);
    auto nz = assign(features, cb);
    if (history) history->push_back(kmeans_objective(features, cb, nz));
    const bool stable = nz == z;
    z = std::move(nz);
    if (stable) break;
  }
  return cb;
}

// ---------------------------------------------------------------------------
// Pre-training heads
// ---------------------------------------------------------------------------

/// A biased linear projection and class embeddings compared by cosine
/// similarity at temperature tau.
template <class T>
struct ClassificationHead {
  std::size_t model_dim = 0, emb_dim = 0, classes = 0;
  double tau = 0.1;
  ParamSet<T> params;

  ClassificationHead() = default;
  ClassificationHead(std::size_t d, std::size_t e, std::size_t c, std::uint64_t seed,
                     double temperature = 0.1)
      : model_dim(d), emb_dim(e), classes(c), tau(temperature) {
    check(c >= 2, "classification head needs at least 2 classes", ErrorCode::kConfig);
    check(tau > 0.0, "temperature must be positive", ErrorCode::kConfig);
    Rng rng(seed);
    params.add_uniform("proj.weight", {d, e}, d, rng);
    params.add_uniform("proj.bias", {e}, d, rng);
    params.add_uniform("class_emb", {c, e}, e, rng);
  }
};

template <class T>
struct RegressionHead {
  std::size_t model_dim = 0, out_dim = 0;
  ParamSet<T> params;

  RegressionHead() = default;
  RegressionHead(std::size_t d, std::size_t out, std::uint64_t seed) : model_dim(d), out_dim(out) {
    Rng rng(seed);
    params.add_uniform("proj.weight", {d, out}, d, rng);
    params.add_uniform("proj.bias", {out}, d, rng);
  }
};

namespace detail {

inline void check_mask(const MaskSpec& mask, std::size_t frames) {
  if (mask.empty()) throw Error("no masked frames", ErrorCode::kInvalidArgument);
  for (std::size_t i : mask.indices)
    check(i < frames,
          "mask index " + std::to_string(i) + " out of range for " + std::to_string(frames) +
              " frames",
          ErrorCode::kInvalidArgument);
}

}  // namespace detail

/// Cosine-similarity logits divided by tau for rows h[n, model_dim] -> [n, C].
template <class T>
Var<T> classification_logits(Tape<T>& t, ClassificationHead<T>& head, Var<T> h,
                             bool trainable = true) {
  auto proj = affine(t, h, head.params.get("proj.weight"), head.params.get("proj.bias"), trainable);
  auto e = ad::l2_normalize(t.param(head.params.get("class_emb"), trainable), 1);
  auto sim = ad::matmul(ad::l2_normalize(proj, 1), ad::transpose(e));
  return ad::scale(sim, static_cast<T>(1.0 / head.tau));
}

/// p(c | h_t) for rows of h.
template <class T>
Var<T> classification_probs(Tape<T>& t, ClassificationHead<T>& head, Var<T> h) {
  return ad::softmax(classification_logits(t, head, h), 1);
}

/// -(1/|M|) sum_{t in M} log p(z_t | h_t). Only masked rows of h are read.
template <class T>
Var<T> classification_loss(Tape<T>& t, Var<T> hL, ClassificationHead<T>& head,
                           const std::vector<std::size_t>& z, const MaskSpec& mask,
                           bool trainable = true) {
  detail::check_mask(mask, hL.dim(0));
  check(z.size() == hL.dim(0),
        "classification_loss: " + std::to_string(z.size()) + " targets for " +
            std::to_string(hL.dim(0)) + " frames",
        ErrorCode::kShapeMismatch);
  std::vector<std::size_t> zm;
  for (std::size_t i : mask.indices) {
    check(z[i] < head.classes, "classification_loss: target class out of range",
          ErrorCode::kInvalidArgument);
    zm.push_back(z[i]);
  }
  auto rows = ad::gather_rows(hL, mask.indices);
  auto logp = ad::log_softmax(classification_logits(t, head, rows, trainable), 1);
  return ad::scale(ad::mean_all(ad::pick(logp, zm)), T{-1});
}

/// (1/(D |M|)) sum_{t in M} ||proj(h_t) - target_t||^2 with D the target width.
template <class T>
Var<T> regression_loss(Tape<T>& t, Var<T> hL, RegressionHead<T>& head,
                       const Matrix<double>& target, const MaskSpec& mask,
                       bool trainable = true) {
  detail::check_mask(mask, hL.dim(0));
  if (target.rows != hL.dim(0) || target.cols != head.out_dim)
    throw Error("regression_loss: target is " + std::to_string(target.rows) + "x" +
                    std::to_string(target.cols) + " but expected " + std::to_string(hL.dim(0)) +
                    "x" + std::to_string(head.out_dim),
                ErrorCode::kShapeMismatch);
  const std::size_t d = target.cols;
  std::vector<T> tv(mask.size() * d);
  for (std::size_t k = 0; k < mask.size(); ++k)
    for (std::size_t j = 0; j < d; ++j)
      tv[k * d + j] = static_cast<T>(target(mask.indices[k], j));
  auto pred = affine(t, ad::gather_rows(hL, mask.indices), head.params.get("proj.weight"),
                     head.params.get("proj.bias"), trainable);
  auto diff = ad::sub(pred, t.constant({mask.size(), d}, std::move(tv)));
  return ad::mean_all(ad::mul(diff, diff));
}

/// Decimated fbank rows aligned to `frames` SSL frames: every factor-th row,
/// then truncated or edge-padded by at most one row.
inline Matrix<double> align_targets(const Matrix<double>& fbank, int factor, std::size_t frames) {
  auto dec = decimate_frames(fbank, factor);
  if (dec.rows + 1 < frames || frames + 1 < dec.rows)
    throw Error("alignment gap too large: " + std::to_string(dec.rows) + " target frames for " +
                    std::to_string(frames) + " SSL frames",
                ErrorCode::kShapeMismatch);
  Matrix<double> out(frames, dec.cols);
  for (std::size_t t = 0; t < frames; ++t)
    std::copy_n(dec.row(std::min(t, dec.rows - 1)), dec.cols, out.row(t));
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning loss
// ---------------------------------------------------------------------------

namespace detail {

inline void check_same(const Matrix<double>& a, std::size_t rows, std::size_t cols,
                       const char* what) {
  if (a.rows != rows || a.cols != cols)
    throw Error(std::string("signal_restoration_loss: ") + what + " is " + std::to_string(a.rows) +
                    "x" + std::to_string(a.cols) + ", mask is " + std::to_string(rows) + "x" +
                    std::to_string(cols),
                ErrorCode::kShapeMismatch);
}

}  // namespace detail

/// mean((mask * noisy)^c - clean^c)^2 over all cells.
template <class T>
Var<T> signal_restoration_loss(Tape<T>& t, Var<T> mask_hat, const Matrix<double>& noisy_mag,
                               const Matrix<double>& clean_mag, double exponent = 1.0) {
  ad::detail::require_rank("signal_restoration_loss", mask_hat.shape(), 2);
  const std::size_t rows = mask_hat.dim(0), cols = mask_hat.dim(1);
  detail::check_same(noisy_mag, rows, cols, "noisy magnitude");
  detail::check_same(clean_mag, rows, cols, "clean magnitude");
  std::vector<T> nv(noisy_mag.data.size()), cv(clean_mag.data.size());
  for (std::size_t i = 0; i < nv.size(); ++i) {
    nv[i] = static_cast<T>(noisy_mag.data[i]);
    cv[i] = static_cast<T>(exponent == 1.0 ? clean_mag.data[i]
                                           : std::pow(clean_mag.data[i], exponent));
  }
  auto est = ad::mul(mask_hat, t.constant({rows, cols}, std::move(nv)));
  if (exponent != 1.0) est = ad::pow(ad::add_scalar(est, T(1e-8)), static_cast<T>(exponent));
  auto diff = ad::sub(est, t.constant({rows, cols}, std::move(cv)));
  return ad::mean_all(ad::mul(diff, diff));
}

/// Same loss on plain matrices, for evaluation.
inline double restoration_loss_value(const Matrix<double>& mask, const Matrix<double>& noisy_mag,
                                     const Matrix<double>& clean_mag, double exponent = 1.0) {
  detail::check_same(noisy_mag, mask.rows, mask.cols, "noisy magnitude");
  detail::check_same(clean_mag, mask.rows, mask.cols, "clean magnitude");
  double s = 0.0;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    double est = mask.data[i] * noisy_mag.data[i];
    double ref = clean_mag.data[i];
    if (exponent != 1.0) {
      est = std::pow(est + 1e-8, exponent);
      ref = std::pow(ref, exponent);
    }
    s += (est - ref) * (est - ref);
  }
  return mask.data.empty() ? 0.0 : s / static_cast<double>(mask.data.size());
}

}  // namespace sslse
