// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Finite-difference checks of the composite networks and losses, on small
// configurations so the whole set runs in seconds.

#pragma once

#include <cstdint>
#include <vector>

#include "sslse/gradcheck_suite.hpp"
#include "sslse/models.hpp"
#include "sslse/objectives.hpp"

namespace sslse {

namespace detail {

inline BackboneConfig gradcheck_backbone() {
  BackboneConfig c;
  c.cnn_layers = {{4, 8, 4}, {8, 10, 5}};
  c.model_dim = 8;
  c.num_blocks = 2;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.rel_pos_buckets = 8;
  c.rel_pos_max_distance = 16;
  return c;
}

inline std::vector<double> uniform_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Matrix<double> uniform_mat(std::size_t r, std::size_t c, Rng& rng, double lo, double hi) {
  Matrix<double> m(r, c);
  m.data = uniform_vec(r * c, rng, lo, hi);
  return m;
}

}  // namespace detail

/// Composite checks: both pre-training losses, the restoration loss, the
/// backbone end to end and the enhancement head.
inline std::vector<ad::GradCheckResult> composite_gradchecks(std::uint64_t seed) {
  using ad::check_input_gradients;
  using ad::check_param_gradients;
  std::vector<ad::GradCheckResult> out;
  Rng rng(seed);
  const std::size_t coords = 24;

  // Pre-training losses, on backbone outputs: parameters of backbone and head.
  {
    Backbone<double> bb(detail::gradcheck_backbone(), derive_seed(seed, 1));
    const std::size_t d = bb.cfg.model_dim;
    const auto wave = detail::uniform_vec(44 + 20 * 7, rng);
    const std::size_t frames = bb.cfg.frames_for(wave.size());
    MaskSpec mask;
    mask.indices = {1, 2, 5};
    std::vector<std::size_t> z(frames);
    for (auto& c : z) c = static_cast<std::size_t>(rng.uniform_int(0, 3));
    ClassificationHead<double> ch(d, 4, 4, derive_seed(seed, 2));
    RegressionHead<double> rh(d, 6, derive_seed(seed, 3));
    const auto target = detail::uniform_mat(frames, 6, rng, -2.0, 0.0);

    auto cls_params = bb.params.all();
    for (auto* p : ch.params.all()) cls_params.push_back(p);
    out.push_back(check_param_gradients(
        "classification loss (backbone + head)", cls_params,
        [&](Tape<double>& t) {
          return classification_loss(t, backbone_forward(t, bb, wave, &mask.indices).back(), ch, z,
                                     mask);
        },
        1e-5, coords, derive_seed(seed, 4)));
    auto reg_params = bb.params.all();
    for (auto* p : rh.params.all()) reg_params.push_back(p);
    out.push_back(check_param_gradients(
        "regression loss (backbone + head)", reg_params,
        [&](Tape<double>& t) {
          return regression_loss(t, backbone_forward(t, bb, wave, &mask.indices).back(), rh, target,
                                 mask);
        },
        1e-5, coords, derive_seed(seed, 5)));

    const std::vector<ad::TensorInit> h{{{frames, d}, detail::uniform_vec(frames * d, rng)}};
    out.push_back(check_input_gradients(
        "classification loss (input)", h,
        [&](Tape<double>& t, const std::vector<Var<double>>& v) {
          return classification_loss(t, v[0], ch, z, mask);
        }));
    out.push_back(check_input_gradients(
        "regression loss (input)", h,
        [&](Tape<double>& t, const std::vector<Var<double>>& v) {
          return regression_loss(t, v[0], rh, target, mask);
        }));
  }

  // Restoration loss on a free mask.
  for (double c : {1.0, 0.5}) {
    const std::size_t frames = 5, bins = 6;
    const auto noisy = detail::uniform_mat(frames, bins, rng, 0.1, 2.0);
    const auto clean = detail::uniform_mat(frames, bins, rng, 0.0, 1.5);
    const std::vector<ad::TensorInit> m{{{frames, bins}, detail::uniform_vec(frames * bins, rng, 0.1, 0.9)}};
    out.push_back(check_input_gradients(
        c == 1.0 ? "restoration loss (c=1)" : "restoration loss (c=0.5)", m,
        [&](Tape<double>& t, const std::vector<Var<double>>& v) {
          return signal_restoration_loss(t, v[0], noisy, clean, c);
        }));
  }

  // Full backbone: every parameter and the waveform.
  {
    Backbone<double> bb(detail::gradcheck_backbone(), derive_seed(seed, 6));
    const auto wave = detail::uniform_vec(44 + 20 * 5, rng);
    const std::vector<std::size_t> masked{1, 2};
    out.push_back(check_param_gradients(
        "backbone (parameters)", bb.params.all(),
        [&](Tape<double>& t) {
          return ad::random_projection(backbone_forward(t, bb, wave, &masked).back(),
                                       derive_seed(seed, 7));
        },
        1e-5, coords, derive_seed(seed, 8)));
    out.push_back(check_input_gradients(
        "backbone (waveform)", {{{wave.size()}, wave}},
        [&](Tape<double>& t, const std::vector<Var<double>>& v) {
          auto hs = transformer_forward(t, bb, cnn_encode(t, bb, v[0]));
          return ad::random_projection(hs.back(), derive_seed(seed, 9));
        },
        1e-5, coords, derive_seed(seed, 10)));
  }

  // Full head: tied and untied directions, single and weighted latent.
  for (int variant = 0; variant < 3; ++variant) {
    EnhancementHeadConfig cfg;
    cfg.bins = 6;
    cfg.latent_dim = variant == 2 ? 0 : 4;
    cfg.hidden_units = 3;
    cfg.weighted_layers = variant == 1 ? 3 : 0;
    cfg.tied_directions = variant == 1;
    EnhancementHead<double> head(cfg, derive_seed(seed, 11 + static_cast<std::uint64_t>(variant)));
    if (cfg.weighted_layers) head.params.get("head.layer_logits").value = {0.3, -0.2, 0.5};
    const std::size_t frames = 5, nl = cfg.latent_dim == 0 ? 0 : std::max<std::size_t>(1, cfg.weighted_layers);
    const auto noisy = detail::uniform_mat(frames, cfg.bins, rng, 0.1, 2.0);
    const auto clean = detail::uniform_mat(frames, cfg.bins, rng, 0.0, 1.5);
    const auto feats = head_spectral_features<double>(noisy, cfg.log_floor);
    std::vector<std::vector<double>> lats;
    for (std::size_t k = 0; k < nl; ++k) lats.push_back(detail::uniform_vec(frames * 4, rng));
    auto build = [&](Tape<double>& t, Var<double> f, const std::vector<Var<double>>& lv) {
      Var<double> mask;
      if (lv.empty()) {
        mask = enhancement_forward(t, head, f, static_cast<const Var<double>*>(nullptr));
      } else {
        Var<double> lat = cfg.weighted_layers ? weighted_latent(t, head, lv) : lv[0];
        mask = enhancement_forward(t, head, f, &lat);
      }
      return signal_restoration_loss(t, mask, noisy, clean);
    };
    const std::string tag = variant == 0 ? "head" : variant == 1 ? "head (tied, weighted layers)" : "head (no latent)";
    out.push_back(check_param_gradients(
        tag + " (parameters)", head.params.all(),
        [&](Tape<double>& t) {
          std::vector<Var<double>> lv;
          for (const auto& l : lats) lv.push_back(t.constant({frames, 4}, l));
          return build(t, t.constant({frames, cfg.bins}, feats), lv);
        },
        1e-5, coords, derive_seed(seed, 14)));
    std::vector<ad::TensorInit> ins{{{frames, cfg.bins}, feats}};
    for (const auto& l : lats) ins.push_back({{frames, 4}, l});
    out.push_back(check_input_gradients(
        tag + " (inputs)", ins,
        [&](Tape<double>& t, const std::vector<Var<double>>& v) {
          return build(t, v[0], std::vector<Var<double>>(v.begin() + 1, v.end()));
        }));
  }
  return out;
}

/// Every op case plus every composite. `instances` random instances per op.
inline std::vector<ad::GradCheckResult> all_gradchecks(std::size_t instances, std::uint64_t seed) {
  std::vector<ad::GradCheckResult> out;
  for (const auto& op : ad::op_cases()) out.push_back(ad::check_op(op, instances, seed));
  for (auto& r : composite_gradchecks(derive_seed(seed, 0xC0)))
    out.push_back(std::move(r));
  return out;
}

}  // namespace sslse
