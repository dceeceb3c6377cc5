// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// SSL backbone (strided CNN encoder, mask embedding, transformer with a gated
// relative position bias) and the bi-directional LSTM enhancement head.

#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "sslse/autodiff.hpp"
#include "sslse/common.hpp"
#include "sslse/dsp.hpp"

namespace sslse {

using ad::Parameter;
using ad::Shape;
using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

/// Named parameters in creation order. Element addresses are stable.
template <class T>
class ParamSet {
 public:
  Parameter<T>& add(const std::string& name, Shape shape) {
    check(!index_.count(name), "duplicate parameter name " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(shape));
    return items_.back();
  }

  /// Uniform in +-1/sqrt(fan_in).
  Parameter<T>& add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
    auto& p = add(name, std::move(shape));
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : p.value) x = static_cast<T>(rng.uniform(-a, a));
    return p;
  }

  Parameter<T>& add_fill(const std::string& name, Shape shape, T v) {
    auto& p = add(name, std::move(shape));
    std::fill(p.value.begin(), p.value.end(), v);
    return p;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter " + name, ErrorCode::kUnknownTensor);
    return items_[it->second];
  }
  const Parameter<T>& get(const std::string& name) const {
    return const_cast<ParamSet*>(this)->get(name);
  }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    for (auto& p : items_) out.push_back(&p);
    return out;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.size();
    return n;
  }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::deque<Parameter<T>> items_;
  std::map<std::string, std::size_t> index_;
};

/// y = x W + b for x[n, in], W[in, out], b[out].
template <class T>
Var<T> affine(Tape<T>& t, Var<T> x, Parameter<T>& w, Parameter<T>& b, bool trainable) {
  return ad::add_bias(ad::matmul(x, t.param(w, trainable)), t.param(b, trainable));
}

/// Layer norm over the last axis of x[n, d] with learned gain and bias.
template <class T>
Var<T> norm_affine(Tape<T>& t, Var<T> x, Parameter<T>& gain, Parameter<T>& bias, bool trainable) {
  return ad::add_bias(ad::mul_last(ad::layernorm(x, 1), t.param(gain, trainable)),
                      t.param(bias, trainable));
}

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

struct ConvSpec {
  std::size_t out_channels, kernel, stride;
};

struct BackboneConfig {
  std::vector<ConvSpec> cnn_layers{{32, 16, 8}, {64, 40, 40}};
  std::size_t model_dim = 64;
  std::size_t num_blocks = 3;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t rel_pos_buckets = 32;
  std::size_t rel_pos_max_distance = 64;
  bool rel_pos = true;

  std::size_t total_stride() const {
    std::size_t s = 1;
    for (const auto& l : cnn_layers) s *= l.stride;
    return s;
  }

  std::size_t receptive_field() const {
    std::size_t r = 1, jump = 1;
    for (const auto& l : cnn_layers) {
      r += (l.kernel - 1) * jump;
      jump *= l.stride;
    }
    return r;
  }

  /// Output frames of the conv chain, applying each layer's floor in turn.
  std::size_t frames_for(std::size_t samples) const {
    std::size_t n = samples;
    for (const auto& l : cnn_layers) {
      if (n < l.kernel) return 0;
      n = (n - l.kernel) / l.stride + 1;
    }
    return n;
  }

  std::size_t head_dim() const { return model_dim / num_heads; }

  void validate() const {
    check(!cnn_layers.empty(), "backbone needs at least one conv layer", ErrorCode::kConfig);
    check(cnn_layers.back().out_channels == model_dim,
          "last conv layer must output model_dim channels", ErrorCode::kConfig);
    check(num_heads > 0 && model_dim % num_heads == 0,
          "model_dim must be divisible by num_heads", ErrorCode::kConfig);
    check(num_blocks >= 1, "backbone needs at least one block", ErrorCode::kConfig);
    check(rel_pos_buckets >= 4 && rel_pos_buckets % 2 == 0,
          "rel_pos_buckets must be even and >= 4", ErrorCode::kConfig);
    check(rel_pos_max_distance >= rel_pos_buckets / 4,
          "rel_pos_max_distance too small for the bucket count", ErrorCode::kConfig);
  }

  std::string describe() const {
    std::string s = "cnn=";
    for (const auto& l : cnn_layers)
      s += std::to_string(l.out_channels) + "/" + std::to_string(l.kernel) + "/" +
           std::to_string(l.stride) + ",";
    s += "d=" + std::to_string(model_dim) + ",L=" + std::to_string(num_blocks) +
         ",h=" + std::to_string(num_heads) + ",ffn=" + std::to_string(ffn_dim) +
         ",b=" + std::to_string(rel_pos_buckets) + ",m=" + std::to_string(rel_pos_max_distance) +
         ",rp=" + std::to_string(rel_pos);
    return s;
  }
};

/// Signed log-spaced bucket of a key-minus-query offset. Half the buckets
/// hold non-positive offsets and half positive ones; within each half small
/// distances get their own bucket and larger ones share log-spaced buckets up
/// to max_distance, beyond which they clip to the last bucket.
inline std::size_t rel_pos_bucket(long offset, std::size_t num_buckets, std::size_t max_distance) {
  const std::size_t half = num_buckets / 2;
  std::size_t base = 0;
  if (offset > 0) base = half;
  const auto n = static_cast<std::size_t>(offset < 0 ? -offset : offset);
  const std::size_t exact = half / 2;
  if (n < exact) return base + n;
  const double scaled = std::log(static_cast<double>(n) / static_cast<double>(exact)) /
                        std::log(static_cast<double>(max_distance) / static_cast<double>(exact)) *
                        static_cast<double>(half - exact);
  const std::size_t b = exact + static_cast<std::size_t>(scaled);
  return base + std::min(b, half - 1);
}

/// Row-major frames x frames bucket table for offsets j - i.
inline std::vector<std::size_t> rel_pos_table(std::size_t frames, std::size_t num_buckets,
                                              std::size_t max_distance) {
  std::vector<std::size_t> idx(frames * frames);
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t j = 0; j < frames; ++j)
      idx[i * frames + j] = rel_pos_bucket(static_cast<long>(j) - static_cast<long>(i),
                                           num_buckets, max_distance);
  return idx;
}

/// Bias for one head: bias[i][j] = (1 + sigmoid(q_i . u)) * b[bucket(j - i)].
/// q[frames, head_dim], u[1, head_dim], table[frames * frames, heads] holds
/// the per-bucket scalars already gathered by offset.
template <class T>
Var<T> gated_rel_pos_bias(Var<T> q, Var<T> u, Var<T> table, std::size_t head) {
  const std::size_t frames = q.dim(0);
  auto b = ad::reshape(ad::slice(table, 1, head, head + 1), {frames, frames});
  auto gate = ad::sigmoid(ad::matmul(q, ad::transpose(u)));
  return ad::scale_rows(b, ad::add_scalar(gate, T{1}));
}

template <class T>
struct Backbone {
  BackboneConfig cfg;
  ParamSet<T> params;

  Backbone() = default;
  Backbone(const BackboneConfig& c, std::uint64_t seed) : cfg(c) {
    cfg.validate();
    Rng rng(seed);
    std::size_t cin = 1;
    for (std::size_t l = 0; l < cfg.cnn_layers.size(); ++l) {
      const auto& L = cfg.cnn_layers[l];
      const std::string p = "cnn." + std::to_string(l) + ".";
      params.add_uniform(p + "weight", {L.out_channels, cin, L.kernel}, cin * L.kernel, rng);
      params.add_uniform(p + "bias", {L.out_channels}, cin * L.kernel, rng);
      cin = L.out_channels;
    }
    const std::size_t d = cfg.model_dim, f = cfg.ffn_dim;
    params.add_fill("cnn.norm.gain", {d}, T{1});
    params.add_fill("cnn.norm.bias", {d}, T{0});
    params.add_uniform("mask_emb", {d}, d, rng);
    for (std::size_t k = 0; k < cfg.num_blocks; ++k) {
      const std::string p = "blocks." + std::to_string(k) + ".";
      params.add_fill(p + "ln1.gain", {d}, T{1});
      params.add_fill(p + "ln1.bias", {d}, T{0});
      params.add_uniform(p + "attn.qkv.weight", {d, 3 * d}, d, rng);
      params.add_uniform(p + "attn.qkv.bias", {3 * d}, d, rng);
      params.add_uniform(p + "attn.out.weight", {d, d}, d, rng);
      params.add_uniform(p + "attn.out.bias", {d}, d, rng);
      if (cfg.rel_pos) {
        params.add_uniform(p + "attn.rel_bias", {cfg.rel_pos_buckets, cfg.num_heads},
                           cfg.rel_pos_buckets, rng);
        params.add_uniform(p + "attn.gate_u", {cfg.num_heads, cfg.head_dim()}, cfg.head_dim(),
                           rng);
      }
      params.add_fill(p + "ln2.gain", {d}, T{1});
      params.add_fill(p + "ln2.bias", {d}, T{0});
      params.add_uniform(p + "ffn.0.weight", {d, f}, d, rng);
      params.add_uniform(p + "ffn.0.bias", {f}, d, rng);
      params.add_uniform(p + "ffn.1.weight", {f, d}, f, rng);
      params.add_uniform(p + "ffn.1.bias", {d}, f, rng);
    }
  }
};

/// Waveform [samples] -> x[frames, model_dim]: conv + gelu per layer, then
/// layer norm.
template <class T>
Var<T> cnn_encode(Tape<T>& t, Backbone<T>& m, Var<T> wave, bool trainable = true) {
  const auto& cfg = m.cfg;
  const std::size_t n = wave.numel(), r = cfg.receptive_field();
  if (n < r)
    throw Error("cnn_encode: input of " + std::to_string(n) +
                    " samples is shorter than the receptive field of " + std::to_string(r),
                ErrorCode::kInvalidArgument);
  auto x = ad::reshape(wave, {1, n});
  for (std::size_t l = 0; l < cfg.cnn_layers.size(); ++l) {
    const std::string p = "cnn." + std::to_string(l) + ".";
    x = ad::gelu(ad::conv1d(x, t.param(m.params.get(p + "weight"), trainable),
                            t.param(m.params.get(p + "bias"), trainable),
                            cfg.cnn_layers[l].stride));
  }
  return norm_affine(t, ad::transpose(x), m.params.get("cnn.norm.gain"),
                     m.params.get("cnn.norm.bias"), trainable);
}

template <class T>
Var<T> cnn_encode(Tape<T>& t, Backbone<T>& m, const std::vector<T>& wave, bool trainable = true) {
  return cnn_encode(t, m, t.constant({wave.size()}, wave), trainable);
}

/// Rows listed in `masked` are replaced by the embedding; others are copied.
template <class T>
Var<T> apply_mask(Var<T> x, const std::vector<std::size_t>& masked, Var<T> emb) {
  for (std::size_t i : masked)
    if (i >= x.dim(0))
      throw Error("apply_mask: index " + std::to_string(i) + " out of range for " +
                      std::to_string(x.dim(0)) + " frames",
                  ErrorCode::kInvalidArgument);
  return ad::replace_rows(x, masked, emb);
}

/// Optional probes filled by transformer_forward.
template <class T>
struct TransformerTrace {
  std::vector<Var<T>> attention;  // [frames, frames] per block and head
};

/// Pre-norm blocks; returns the output of every block.
template <class T>
std::vector<Var<T>> transformer_forward(Tape<T>& t, Backbone<T>& m, Var<T> x,
                                        bool trainable = true,
                                        TransformerTrace<T>* trace = nullptr) {
  const auto& cfg = m.cfg;
  const std::size_t frames = x.dim(0), d = cfg.model_dim, hd = cfg.head_dim();
  check(frames >= 1, "transformer_forward: no frames");
  check(x.dim(1) == d, "transformer_forward: expected width " + std::to_string(d),
        ErrorCode::kShapeMismatch);
  std::vector<std::size_t> buckets;
  if (cfg.rel_pos) buckets = rel_pos_table(frames, cfg.rel_pos_buckets, cfg.rel_pos_max_distance);
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  std::vector<Var<T>> outs;
  Var<T> h = x;
  for (std::size_t k = 0; k < cfg.num_blocks; ++k) {
    const std::string p = "blocks." + std::to_string(k) + ".";
    auto& P = m.params;
    try {
      auto a = norm_affine(t, h, P.get(p + "ln1.gain"), P.get(p + "ln1.bias"), trainable);
      auto qkv = affine(t, a, P.get(p + "attn.qkv.weight"), P.get(p + "attn.qkv.bias"), trainable);
      Var<T> table, gate_u;
      if (cfg.rel_pos) {
        table = ad::gather_rows(t.param(P.get(p + "attn.rel_bias"), trainable), buckets);
        gate_u = t.param(P.get(p + "attn.gate_u"), trainable);
      }
      std::vector<Var<T>> heads;
      for (std::size_t hh = 0; hh < cfg.num_heads; ++hh) {
        auto q = ad::slice(qkv, 1, hh * hd, (hh + 1) * hd);
        auto kk = ad::slice(qkv, 1, d + hh * hd, d + (hh + 1) * hd);
        auto v = ad::slice(qkv, 1, 2 * d + hh * hd, 2 * d + (hh + 1) * hd);
        auto logits = ad::scale(ad::matmul(q, ad::transpose(kk)), inv_sqrt);
        if (cfg.rel_pos)
          logits = ad::add(logits,
                           gated_rel_pos_bias(q, ad::slice(gate_u, 0, hh, hh + 1), table, hh));
        auto probs = ad::softmax(logits, 1);
        if (trace) trace->attention.push_back(probs);
        heads.push_back(ad::matmul(probs, v));
      }
      auto att = affine(t, ad::concat(heads, 1), P.get(p + "attn.out.weight"),
                        P.get(p + "attn.out.bias"), trainable);
      h = ad::add(h, att);
      auto b = norm_affine(t, h, P.get(p + "ln2.gain"), P.get(p + "ln2.bias"), trainable);
      auto ff = affine(t, ad::gelu(affine(t, b, P.get(p + "ffn.0.weight"), P.get(p + "ffn.0.bias"),
                                          trainable)),
                       P.get(p + "ffn.1.weight"), P.get(p + "ffn.1.bias"), trainable);
      h = ad::add(h, ff);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
      throw Error("block " + std::to_string(k) + ": " + e.what(), ErrorCode::kNonFinite);
    }
    outs.push_back(h);
  }
  return outs;
}

/// cnn_encode -> optional mask -> transformer.
template <class T>
std::vector<Var<T>> backbone_forward(Tape<T>& t, Backbone<T>& m, const std::vector<T>& wave,
                                     const std::vector<std::size_t>* masked = nullptr,
                                     bool trainable = true) {
  auto x = cnn_encode(t, m, wave, trainable);
  if (masked != nullptr) x = apply_mask(x, *masked, t.param(m.params.get("mask_emb"), trainable));
  return transformer_forward(t, m, x, trainable);
}

/// Per-block outputs as plain matrices, without gradient bookkeeping.
template <class T>
std::vector<Matrix<T>> backbone_features(Backbone<T>& m, const std::vector<T>& wave) {
  Tape<T> t;
  auto hs = backbone_forward(t, m, wave, nullptr, false);
  std::vector<Matrix<T>> out;
  for (const auto& h : hs) {
    Matrix<T> mat(h.dim(0), h.dim(1));
    mat.data = h.value();
    out.push_back(std::move(mat));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Enhancement head
// ---------------------------------------------------------------------------

struct EnhancementHeadConfig {
  std::size_t recurrent_layers = 2;
  std::size_t hidden_units = 128;
  std::size_t bins = 257;
  std::size_t latent_dim = 64;  // 0: noisy magnitude only
  // Forward and backward directions share weights and their outputs are
  // summed, which makes the head exactly time-reversal equivariant.
  bool tied_directions = false;
  // Learned convex combination of backbone layers instead of the last one.
  std::size_t weighted_layers = 0;
  double log_floor = 1e-3;

  std::size_t input_dim() const { return bins + latent_dim; }
  std::size_t layer_output_dim() const { return tied_directions ? hidden_units : 2 * hidden_units; }

  void validate() const {
    check(recurrent_layers >= 1 && hidden_units >= 1 && bins >= 1,
          "enhancement head needs at least one layer, unit and bin", ErrorCode::kConfig);
    check(log_floor > 0.0, "head.log_floor must be positive", ErrorCode::kConfig);
    check(weighted_layers == 0 || latent_dim > 0,
          "layer weighting needs a latent input", ErrorCode::kConfig);
  }
};

template <class T>
struct EnhancementHead {
  EnhancementHeadConfig cfg;
  ParamSet<T> params;

  EnhancementHead() = default;
  EnhancementHead(const EnhancementHeadConfig& c, std::uint64_t seed) : cfg(c) {
    cfg.validate();
    Rng rng(seed);
    const std::size_t h = cfg.hidden_units;
    if (cfg.weighted_layers > 0) params.add_fill("head.layer_logits", {cfg.weighted_layers}, T{0});
    std::size_t in = cfg.input_dim();
    for (std::size_t l = 0; l < cfg.recurrent_layers; ++l) {
      for (const char* dir : {"fwd", "bwd"}) {
        if (cfg.tied_directions && std::string(dir) == "bwd") continue;
        const std::string p = "head.lstm." + std::to_string(l) + "." + dir + ".";
        params.add_uniform(p + "wx", {in, 4 * h}, in, rng);
        params.add_uniform(p + "wh", {h, 4 * h}, h, rng);
        params.add_uniform(p + "bias", {4 * h}, h, rng);
      }
      in = cfg.layer_output_dim();
    }
    params.add_uniform("head.out.weight", {in, cfg.bins}, in, rng);
    params.add_uniform("head.out.bias", {cfg.bins}, in, rng);
  }
};

/// Log-compressed magnitude used as the head's spectral input.
template <class T>
std::vector<T> head_spectral_features(const Matrix<double>& noisy_mag, double floor) {
  std::vector<T> out(noisy_mag.data.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(std::log(noisy_mag.data[i] + floor));
  return out;
}

/// Combines stacked backbone layers [layers][frames, dim] into one latent.
template <class T>
Var<T> weighted_latent(Tape<T>& t, EnhancementHead<T>& head, const std::vector<Var<T>>& layers,
                       bool trainable = true) {
  const std::size_t n = head.cfg.weighted_layers;
  check(layers.size() == n, "weighted_latent: expected " + std::to_string(n) + " layers, got " +
                                std::to_string(layers.size()),
        ErrorCode::kShapeMismatch);
  auto w = ad::softmax(t.param(head.params.get("head.layer_logits"), trainable), 0);
  const std::size_t frames = layers[0].dim(0), dim = layers[0].dim(1);
  std::vector<Var<T>> flat;
  for (const auto& l : layers) flat.push_back(ad::reshape(l, {1, frames * dim}));
  auto stacked = ad::concat(flat, 0);                              // [n, frames*dim]
  auto mixed = ad::matmul(ad::reshape(w, {1, n}), stacked);        // [1, frames*dim]
  return ad::reshape(mixed, {frames, dim});
}

/// features[frames, bins] (+ latent[frames, latent_dim]) -> mask[frames, bins]
/// in (0, 1). `features` is the head's spectral input (see
/// head_spectral_features).
template <class T>
Var<T> enhancement_forward(Tape<T>& t, EnhancementHead<T>& head, Var<T> features,
                           const Var<T>* latent, bool trainable = true) {
  const auto& cfg = head.cfg;
  check(features.shape().size() == 2 && features.dim(1) == cfg.bins,
        "enhancement_forward: expected " + std::to_string(cfg.bins) + " bins, got " +
            ad::shape_str(features.shape()),
        ErrorCode::kShapeMismatch);
  Var<T> x = features;
  if (cfg.latent_dim > 0) {
    check(latent != nullptr, "enhancement_forward: head expects a latent input",
          ErrorCode::kInvalidArgument);
    if (latent->dim(0) != features.dim(0))
      throw Error("enhancement_forward: frame mismatch, magnitude has " +
                      std::to_string(features.dim(0)) + " frames and latent has " +
                      std::to_string(latent->dim(0)),
                  ErrorCode::kShapeMismatch);
    check(latent->dim(1) == cfg.latent_dim, "enhancement_forward: latent width mismatch",
          ErrorCode::kShapeMismatch);
    x = ad::concat(std::vector<Var<T>>{features, *latent}, 1);
  }
  auto& P = head.params;
  for (std::size_t l = 0; l < cfg.recurrent_layers; ++l) {
    const std::string p = "head.lstm." + std::to_string(l) + ".";
    auto run = [&](const std::string& dir, bool reverse) {
      const std::string q = p + dir + ".";
      auto xw = affine(t, x, P.get(q + "wx"), P.get(q + "bias"), trainable);
      return ad::lstm(xw, t.param(P.get(q + "wh"), trainable), reverse);
    };
    if (cfg.tied_directions) {
      x = ad::add(run("fwd", false), run("fwd", true));
    } else {
      x = ad::concat(std::vector<Var<T>>{run("fwd", false), run("bwd", true)}, 1);
    }
  }
  return ad::sigmoid(affine(t, x, P.get("head.out.weight"), P.get("head.out.bias"), trainable));
}

}  // namespace sslse
