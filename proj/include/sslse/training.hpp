// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Seeded pre-training and fine-tuning loops.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sslse/autodiff.hpp"
#include "sslse/checkpoint.hpp"
#include "sslse/config.hpp"
#include "sslse/dsp.hpp"
#include "sslse/mixsim.hpp"
#include "sslse/models.hpp"
#include "sslse/objectives.hpp"
#include "sslse/wav.hpp"

namespace sslse {

enum class Objective { kClassification, kRegression };

inline Objective parse_objective(const std::string& s) {
  if (s == "classification") return Objective::kClassification;
  if (s == "regression") return Objective::kRegression;
  throw Error("pretrain.objective must be classification or regression, got '" + s + "'",
              ErrorCode::kConfig);
}

/// Linear warm-up to `peak` over round(warmup * steps) steps, then linear
/// decay towards zero at `steps`. `step` counts from 0.
inline double lr_at(std::size_t step, std::size_t steps, double peak, double warmup) {
  const auto w = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(warmup * static_cast<double>(steps))));
  if (step < w) return peak * static_cast<double>(step + 1) / static_cast<double>(w);
  if (steps <= w) return peak;
  return peak * static_cast<double>(steps - step) / static_cast<double>(steps - w);
}

/// Shortest round-trip text for a double, for byte-stable logs.
inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Signed view of an unsigned hash, as stored in i64 checkpoint tensors.
inline std::int64_t hash_as_i64(std::uint64_t h) {
  std::int64_t v;
  std::memcpy(&v, &h, sizeof(v));
  return v;
}

template <class T>
std::vector<T> to_precision(const std::vector<double>& x) {
  return std::vector<T>(x.begin(), x.end());
}

/// Fbank of a waveform using the given STFT and mel settings.
inline FbankFeatures fbank_of(const AudioBuffer& a, const StftConfig& s, const FbankConfig& f) {
  return log_mel_fbank(magnitude(stft(a, s)), f, s.fft_size);
}

// ---------------------------------------------------------------------------
// Pre-training
// ---------------------------------------------------------------------------

struct PretrainConfig {
  Objective objective = Objective::kRegression;
  bool noise_mixing = false;
  double p_mix = 0.1;
  double snr_min = kSnrMinDb, snr_max = kSnrMaxDb;
  std::size_t steps = 200;
  std::size_t batch_utts = 1;
  double lr = 5e-4;
  double warmup = 0.1;
  double clip = 5.0;
  double tau = 0.1;
  std::size_t proj_dim = 32;
  double mask_p = 0.065;
  std::size_t mask_span = 10;
  std::size_t classes = 64;
  std::size_t kmeans_iters = 25;
  std::uint64_t seed = 0;
  BackboneConfig backbone;
  StftConfig stft;
  FbankConfig fbank;
  std::string config_hash = "0000000000000000";

  void validate() const {
    check(p_mix >= 0.0 && p_mix <= 1.0, "pretrain.p_mix must be in [0, 1]", ErrorCode::kConfig);
    check(steps >= 1 && batch_utts >= 1, "pretrain needs at least one step and utterance",
          ErrorCode::kConfig);
    check(snr_min <= snr_max, "pretrain SNR bounds are reversed", ErrorCode::kConfig);
    check(lr > 0.0 && clip > 0.0, "pretrain.lr and pretrain.clip must be positive",
          ErrorCode::kConfig);
    backbone.validate();
    duplication_factor(backbone, stft);
  }
};

inline PretrainConfig pretrain_config(const Config& c) {
  PretrainConfig p;
  p.objective = parse_objective(c.str("pretrain.objective"));
  p.noise_mixing = c.flag("pretrain.noise_mixing");
  p.p_mix = c.num("pretrain.p_mix");
  p.snr_min = c.num("pretrain.snr_min");
  p.snr_max = c.num("pretrain.snr_max");
  p.steps = c.count("pretrain.steps");
  p.batch_utts = c.count("pretrain.batch_utts");
  p.lr = c.num("pretrain.lr");
  p.warmup = c.num("pretrain.warmup");
  p.clip = c.num("pretrain.clip");
  p.tau = c.num("pretrain.tau");
  p.proj_dim = c.count("pretrain.proj_dim");
  p.mask_p = c.num("mask.p");
  p.mask_span = c.count("mask.span");
  p.classes = c.count("quantizer.classes");
  p.kmeans_iters = c.count("quantizer.iters");
  p.seed = static_cast<std::uint64_t>(c.integer("seed"));
  p.backbone = backbone_config(c);
  p.stft = stft_config(c);
  p.fbank = fbank_config(c);
  p.config_hash = c.hash_hex();
  p.validate();
  return p;
}

/// Fbank frames of every speech clip, aligned to SSL frames, stacked.
inline Matrix<double> pooled_targets(const DatasetManifest& speech, AudioStore& store,
                                     const PretrainConfig& cfg) {
  const int factor = duplication_factor(cfg.backbone, cfg.stft);
  Matrix<double> all(0, static_cast<std::size_t>(cfg.fbank.n_mels));
  for (const auto& e : speech.entries) {
    const auto& a = store.get(e.clip_id);
    const auto t = align_targets(fbank_of(a, cfg.stft, cfg.fbank), factor,
                                 cfg.backbone.frames_for(a.size()));
    all.data.insert(all.data.end(), t.data.begin(), t.data.end());
    all.rows += t.rows;
  }
  return all;
}

/// k-means codebook over the clean fbank frames of the speech manifest.
inline QuantizerCodebook quantize_targets(const DatasetManifest& speech, const PretrainConfig& cfg) {
  AudioStore store(speech);
  return kmeans_quantize(pooled_targets(speech, store, cfg), cfg.classes, cfg.kmeans_iters,
                         derive_seed(cfg.seed, 0xC0DE));
}

/// What one pre-training step saw, for inspection by callers.
struct PretrainStepTrace {
  std::size_t step = 0;
  std::string clip_id;
  bool mixed = false;
  const AudioBuffer* clean = nullptr;
  const AudioBuffer* input = nullptr;
  const Matrix<double>* targets = nullptr;  // aligned fbank (regression)
  const std::vector<std::size_t>* classes = nullptr;  // k-means ids (classification)
  const MaskSpec* mask = nullptr;
};

template <class T>
struct PretrainResult {
  Backbone<T> backbone;
  ParamSet<T> head;  // proj.* and, for classification, class_emb
  std::optional<QuantizerCodebook> codebook;
  std::vector<double> losses;
  std::vector<std::string> log_lines;
  std::size_t mixer_calls = 0;
};

/// `step<TAB>loss<TAB>lr<TAB>mixed` for one step.
inline std::string loss_log_line(std::size_t step, double loss, double lr, bool mixed) {
  return std::to_string(step) + "\t" + format_g17(loss) + "\t" + format_g17(lr) + "\t" +
         (mixed ? "1" : "0");
}

template <class T>
Checkpoint pretrain_checkpoint(const PretrainResult<T>& r, const PretrainConfig& cfg) {
  Checkpoint ck;
  ck.add_params(r.backbone.params);
  ck.add_params(r.head);
  if (r.codebook) add_codebook(ck, *r.codebook);
  ck.add_i64("meta.step", static_cast<std::int64_t>(r.losses.size()));
  ck.add_i64("meta.seed", hash_as_i64(cfg.seed));
  ck.add_i64("meta.config_hash", hash_as_i64(std::stoull(cfg.config_hash, nullptr, 16)));
  ck.add_i64("meta.dsp_hash", hash_as_i64(std::stoull(dsp_hash(cfg.stft, cfg.fbank), nullptr, 16)));
  return ck;
}

/// Masked-prediction pre-training. With a non-empty `out`, writes
/// loss.log and model.ckpt there.
template <class T>
PretrainResult<T> pretrain(const PretrainConfig& cfg, const DatasetManifest& speech,
                           const DatasetManifest& noise, const std::filesystem::path& out = {},
                           std::optional<QuantizerCodebook> codebook = std::nullopt,
                           const std::function<void(const PretrainStepTrace&)>& on_step = {}) {
  cfg.validate();
  speech.validate();
  check(!speech.empty(), "pretrain: empty speech manifest", ErrorCode::kInvalidArgument);
  if (cfg.noise_mixing) {
    noise.validate();
    check(!noise.empty(), "pretrain: noise mixing needs a non-empty noise manifest",
          ErrorCode::kInvalidArgument);
  }
  const int factor = duplication_factor(cfg.backbone, cfg.stft);

  PretrainResult<T> res;
  res.backbone = Backbone<T>(cfg.backbone, derive_seed(cfg.seed, 1));
  const std::size_t d = cfg.backbone.model_dim;
  std::optional<ClassificationHead<T>> cls;
  std::optional<RegressionHead<T>> reg;
  if (cfg.objective == Objective::kClassification) {
    if (!codebook) codebook = quantize_targets(speech, cfg);
    check(codebook->centroids.cols == static_cast<std::size_t>(cfg.fbank.n_mels),
          "pretrain: codebook width does not match the fbank", ErrorCode::kShapeMismatch);
    cls.emplace(d, cfg.proj_dim, codebook->C, derive_seed(cfg.seed, 2), cfg.tau);
    res.codebook = codebook;
  } else {
    reg.emplace(d, static_cast<std::size_t>(cfg.fbank.n_mels), derive_seed(cfg.seed, 2));
  }
  ParamSet<T>& head_params = cls ? cls->params : reg->params;

  std::vector<Parameter<T>*> params = res.backbone.params.all();
  for (auto* p : head_params.all()) params.push_back(p);
  ad::Adam<T> opt(params);

  AudioStore sstore(speech), nstore(noise);
  // Targets depend only on the clean clip, so compute them once per clip.
  std::map<std::string, Matrix<double>> target_cache;
  std::map<std::string, std::vector<std::size_t>> class_cache;
  auto targets_for = [&](const std::string& id, const AudioBuffer& clean) -> const Matrix<double>& {
    auto it = target_cache.find(id);
    if (it != target_cache.end()) return it->second;
    auto t = align_targets(fbank_of(clean, cfg.stft, cfg.fbank), factor,
                           cfg.backbone.frames_for(clean.size()));
    return target_cache.emplace(id, std::move(t)).first->second;
  };

  std::ofstream log;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    log.open(out / "loss.log", std::ios::trunc);
    if (!log) throw Error("cannot write " + (out / "loss.log").string(), ErrorCode::kIo);
    log << "# config_hash=" << cfg.config_hash << " dsp_hash=" << dsp_hash(cfg.stft, cfg.fbank)
        << "\n";
  }

  const RecipeOptions mix_opt{cfg.snr_min, cfg.snr_max, std::nullopt, false};
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double lr = lr_at(step, cfg.steps, cfg.lr, cfg.warmup);
    opt.zero_grad();
    Tape<T> tape;
    Var<T> total;
    bool any_mixed = false;
    for (std::size_t b = 0; b < cfg.batch_utts; ++b) {
      const std::uint64_t us = derive_seed(derive_seed(cfg.seed, 1000 + step), b);
      Rng rng(us);
      const auto& entry = speech.entries[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(speech.size()) - 1))];
      const AudioBuffer& clean = sstore.get(entry.clip_id);
      const bool mixed = cfg.noise_mixing && rng.bernoulli(cfg.p_mix);
      AudioBuffer mixed_audio;
      if (mixed) {
        const auto r = sample_recipe_for(derive_seed(us, 7), entry, noise, mix_opt);
        mixed_audio = mix(clean, nstore.get(r.noise_id), r);
        ++res.mixer_calls;
        any_mixed = true;
      }
      const AudioBuffer& input = mixed ? mixed_audio : clean;
      const Matrix<double>& target = targets_for(entry.clip_id, clean);
      const std::vector<std::size_t>* z = nullptr;
      if (cls) {
        auto it = class_cache.find(entry.clip_id);
        if (it == class_cache.end()) it = class_cache.emplace(entry.clip_id, assign(target, *codebook)).first;
        z = &it->second;
      }
      Var<T> loss;
      MaskSpec mask;
      try {
        auto x = cnn_encode(tape, res.backbone, to_precision<T>(input.samples));
        mask = gen_nonempty_mask(x.dim(0), cfg.mask_p, cfg.mask_span, derive_seed(us, 3));
        x = apply_mask(x, mask.indices, tape.param(res.backbone.params.get("mask_emb")));
        auto hL = transformer_forward(tape, res.backbone, x).back();
        loss = cls ? classification_loss(tape, hL, *cls, *z, mask)
                   : regression_loss(tape, hL, *reg, target, mask);
        if (cfg.batch_utts > 1) loss = ad::scale(loss, static_cast<T>(1.0 / cfg.batch_utts));
        total = b == 0 ? loss : ad::add(total, loss);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw Error("divergence at step " + std::to_string(step) + ": " + e.what(),
                    ErrorCode::kNonFinite);
      }
      if (on_step) {
        PretrainStepTrace tr;
        tr.step = step;
        tr.clip_id = entry.clip_id;
        tr.mixed = mixed;
        tr.clean = &clean;
        tr.input = &input;
        tr.targets = &target;
        tr.classes = z;
        tr.mask = &mask;
        on_step(tr);
      }
    }
    const double value = static_cast<double>(total.item());
    if (!std::isfinite(value))
      throw Error("divergence at step " + std::to_string(step) + ": non-finite loss",
                  ErrorCode::kNonFinite);
    try {
      tape.backward(total);
    } catch (const Error& e) {
      throw Error("divergence at step " + std::to_string(step) + ": " + e.what(),
                  ErrorCode::kNonFinite);
    }
    ad::clip_grad_norm(params, cfg.clip);
    opt.step(lr);
    res.losses.push_back(value);
    res.log_lines.push_back(loss_log_line(step, value, lr, any_mixed));
    if (log.is_open()) log << res.log_lines.back() << "\n";
  }
  res.head = head_params;
  if (!out.empty()) pretrain_checkpoint(res, cfg).save(out / "model.ckpt");
  return res;
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

enum class LayerMode { kLast, kWeighted };

struct FinetuneConfig {
  std::optional<std::filesystem::path> backbone_checkpoint;
  bool freeze_backbone = true;
  LayerMode layer = LayerMode::kLast;
  std::size_t steps = 500;
  double lr = 1e-3;
  double warmup = 0.1;
  double clip = 5.0;
  double exponent = 1.0;
  std::size_t head_layers = 2;
  std::size_t head_hidden = 128;
  double log_floor = 1e-3;
  bool tied_directions = false;
  ResourceCondition condition;
  std::uint64_t seed = 0;
  BackboneConfig backbone;
  StftConfig stft;
  FbankConfig fbank;
  std::string config_hash = "0000000000000000";

  EnhancementHeadConfig head_config() const {
    EnhancementHeadConfig h;
    h.recurrent_layers = head_layers;
    h.hidden_units = head_hidden;
    h.bins = static_cast<std::size_t>(stft.bins());
    h.latent_dim = backbone_checkpoint ? backbone.model_dim : 0;
    h.tied_directions = tied_directions;
    h.weighted_layers = (backbone_checkpoint && layer == LayerMode::kWeighted) ? backbone.num_blocks : 0;
    h.log_floor = log_floor;
    return h;
  }

  void validate() const {
    check(steps >= 1, "finetune needs at least one step", ErrorCode::kConfig);
    check(lr > 0.0 && clip > 0.0, "finetune.lr and finetune.clip must be positive",
          ErrorCode::kConfig);
    check(exponent > 0.0, "finetune.exponent must be positive", ErrorCode::kConfig);
    head_config().validate();
    if (backbone_checkpoint) {
      backbone.validate();
      duplication_factor(backbone, stft);
    }
  }
};

inline FinetuneConfig finetune_config(const Config& c) {
  FinetuneConfig f;
  const auto& bb = c.str("finetune.backbone");
  if (bb != "none") f.backbone_checkpoint = bb;
  f.freeze_backbone = c.flag("finetune.freeze_backbone");
  const auto& layer = c.str("finetune.layer");
  if (layer == "last") f.layer = LayerMode::kLast;
  else if (layer == "weighted") f.layer = LayerMode::kWeighted;
  else throw Error("finetune.layer must be last or weighted, got '" + layer + "'", ErrorCode::kConfig);
  f.steps = c.count("finetune.steps");
  f.lr = c.num("finetune.lr");
  f.warmup = c.num("finetune.warmup");
  f.clip = c.num("finetune.clip");
  f.exponent = c.num("finetune.exponent");
  f.head_layers = c.count("head.layers");
  f.head_hidden = c.count("head.hidden");
  f.log_floor = c.num("head.log_floor");
  f.condition.speech_hours_limit = c.optional_num("condition.speech_hours");
  f.seed = static_cast<std::uint64_t>(c.integer("seed"));
  f.backbone = backbone_config(c);
  f.stft = stft_config(c);
  f.fbank = fbank_config(c);
  f.config_hash = c.hash_hex();
  f.validate();
  return f;
}

/// Backbone plus head, with everything needed to turn audio into a mask.
template <class T>
struct EnhancementModel {
  std::optional<Backbone<T>> backbone;
  EnhancementHead<T> head;
  StftConfig stft;
  LayerMode layer = LayerMode::kLast;

  /// Backbone latent duplicated to `frames` STFT frames, one matrix per
  /// layer the head consumes.
  std::vector<Matrix<T>> latents(const AudioBuffer& noisy, std::size_t frames) {
    std::vector<Matrix<T>> out;
    if (!backbone) return out;
    auto layers = backbone_features(*backbone, to_precision<T>(noisy.samples));
    const int factor = duplication_factor(backbone->cfg, stft);
    if (layer == LayerMode::kLast) {
      out.push_back(duplicate_frames(layers.back(), factor, frames));
    } else {
      for (const auto& l : layers) out.push_back(duplicate_frames(l, factor, frames));
    }
    return out;
  }

  Var<T> forward(Tape<T>& t, const std::vector<T>& features, std::size_t frames,
                 const std::vector<Matrix<T>>& lat, bool trainable) {
    auto f = t.constant({frames, head.cfg.bins}, features);
    if (lat.empty()) return enhancement_forward(t, head, f, static_cast<const Var<T>*>(nullptr), trainable);
    std::vector<Var<T>> lv;
    for (const auto& m : lat) lv.push_back(t.constant({m.rows, m.cols}, m.data));
    Var<T> l = layer == LayerMode::kWeighted ? weighted_latent(t, head, lv, trainable) : lv[0];
    return enhancement_forward(t, head, f, &l, trainable);
  }

  /// Mask for a noisy utterance given its STFT magnitude.
  Matrix<double> predict_mask(const AudioBuffer& noisy, const MagnitudeSpectrogram& mag) {
    Tape<T> t;
    const auto lat = latents(noisy, mag.rows);
    auto m = forward(t, head_spectral_features<T>(mag, head.cfg.log_floor), mag.rows, lat, false);
    Matrix<double> out(mag.rows, mag.cols);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<double>(m.value()[i]);
    return out;
  }
};

template <class T>
struct FinetuneResult {
  EnhancementModel<T> model;
  std::vector<double> losses;
  std::vector<std::string> log_lines;
  std::vector<std::string> accessed;  // pair ids in the order they were first read
};

template <class T>
Checkpoint finetune_checkpoint(const FinetuneResult<T>& r, const FinetuneConfig& cfg) {
  Checkpoint ck;
  if (r.model.backbone) ck.add_params(r.model.backbone->params);
  ck.add_params(r.model.head.params);
  ck.add_i64("meta.step", static_cast<std::int64_t>(r.losses.size()));
  ck.add_i64("meta.seed", hash_as_i64(cfg.seed));
  ck.add_i64("meta.config_hash", hash_as_i64(std::stoull(cfg.config_hash, nullptr, 16)));
  ck.add_i64("meta.dsp_hash", hash_as_i64(std::stoull(dsp_hash(cfg.stft, cfg.fbank), nullptr, 16)));
  return ck;
}

/// Pairs kept by a speech-hour limit (durations taken from the manifest).
inline PairedManifest subset_pairs(const PairedManifest& pm, const ResourceCondition& cond,
                                   std::uint64_t seed) {
  if (!cond.speech_hours_limit) return pm;
  DatasetManifest as_speech;
  for (const auto& e : pm.entries)
    as_speech.entries.push_back({e.pair_id, e.clean_path, e.duration_s, ClipKind::kSpeech});
  const auto kept = subset_manifest(as_speech, {cond.speech_hours_limit, std::nullopt}, seed);
  PairedManifest out;
  out.base_dir = pm.base_dir;
  for (const auto& e : pm.entries)
    for (const auto& k : kept.entries)
      if (k.clip_id == e.pair_id) out.entries.push_back(e);
  return out;
}

/// Builds the model described by `cfg`, loading the backbone checkpoint if
/// one is configured.
template <class T>
EnhancementModel<T> make_enhancement_model(const FinetuneConfig& cfg) {
  EnhancementModel<T> m;
  m.stft = cfg.stft;
  m.layer = cfg.layer;
  if (cfg.backbone_checkpoint) {
    m.backbone.emplace(cfg.backbone, derive_seed(cfg.seed, 1));
    load_params(m.backbone->params, Checkpoint::load(*cfg.backbone_checkpoint), true,
                {"proj.", "class_emb", "quantizer.", "meta."});
  }
  m.head = EnhancementHead<T>(cfg.head_config(), derive_seed(cfg.seed, 3));
  return m;
}

/// Magnitude-mask fine-tuning on noisy/clean pairs. With a non-empty `out`,
/// writes loss.log, access.log and model.ckpt there.
template <class T>
FinetuneResult<T> finetune(const FinetuneConfig& cfg, const PairedManifest& pairs_in,
                           const std::filesystem::path& out = {}) {
  cfg.validate();
  const PairedManifest pairs = subset_pairs(pairs_in, cfg.condition, derive_seed(cfg.seed, 4));
  check(pairs.size() > 0, "finetune: no training pairs", ErrorCode::kInvalidArgument);

  FinetuneResult<T> res;
  res.model = make_enhancement_model<T>(cfg);
  auto& model = res.model;
  const bool train_backbone = model.backbone && !cfg.freeze_backbone;

  struct Item {
    AudioBuffer noisy;
    MagnitudeSpectrogram noisy_mag, clean_mag;
    std::vector<T> features;
    std::vector<Matrix<T>> latents;  // frozen backbone only
    bool ready = false;
  };
  std::vector<Item> items(pairs.size());
  auto load = [&](std::size_t i) -> Item& {
    Item& it = items[i];
    if (it.ready) return it;
    const auto& e = pairs.entries[i];
    res.accessed.push_back(e.pair_id);
    it.noisy = read_wav(pairs.resolve(e.noisy_path));
    const AudioBuffer clean = read_wav(pairs.resolve(e.clean_path));
    it.noisy_mag = magnitude(stft(it.noisy, cfg.stft));
    it.clean_mag = magnitude(stft(clean, cfg.stft));
    if (it.noisy_mag.rows != it.clean_mag.rows)
      throw Error("finetune: pair " + e.pair_id + " has mismatched noisy/clean lengths",
                  ErrorCode::kShapeMismatch);
    it.features = head_spectral_features<T>(it.noisy_mag, cfg.log_floor);
    if (model.backbone && !train_backbone) it.latents = model.latents(it.noisy, it.noisy_mag.rows);
    it.ready = true;
    return it;
  };

  std::vector<Parameter<T>*> params = model.head.params.all();
  if (train_backbone)
    for (auto* p : model.backbone->params.all()) params.push_back(p);
  ad::Adam<T> opt(params);

  std::ofstream log;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    log.open(out / "loss.log", std::ios::trunc);
    if (!log) throw Error("cannot write " + (out / "loss.log").string(), ErrorCode::kIo);
    log << "# config_hash=" << cfg.config_hash << " dsp_hash=" << dsp_hash(cfg.stft, cfg.fbank)
        << "\n";
  }

  // Pairs are visited in seeded epochs so every pair is used equally often.
  std::vector<std::size_t> order;
  Rng order_rng(derive_seed(cfg.seed, 5));
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (order.empty()) {
      order.resize(pairs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      order_rng.shuffle(order);
      std::reverse(order.begin(), order.end());
    }
    const std::size_t idx = order.back();
    order.pop_back();
    Item& it = load(idx);
    const double lr = lr_at(step, cfg.steps, cfg.lr, cfg.warmup);
    opt.zero_grad();
    Tape<T> tape;
    const std::size_t frames = it.noisy_mag.rows;
    Var<T> loss;
    try {
      Var<T> mask;
      if (train_backbone) {
        auto hs = backbone_forward(tape, *model.backbone, to_precision<T>(it.noisy.samples));
        const auto dup = duplicate_indices(hs.back().dim(0), duplication_factor(cfg.backbone, cfg.stft), frames);
        auto f = tape.constant({frames, model.head.cfg.bins}, it.features);
        Var<T> lat;
        if (cfg.layer == LayerMode::kWeighted) {
          std::vector<Var<T>> lv;
          for (auto& h : hs) lv.push_back(ad::gather_rows(h, dup));
          lat = weighted_latent(tape, model.head, lv);
        } else {
          lat = ad::gather_rows(hs.back(), dup);
        }
        mask = enhancement_forward(tape, model.head, f, &lat);
      } else {
        mask = model.forward(tape, it.features, frames, it.latents, true);
      }
      loss = signal_restoration_loss(tape, mask, it.noisy_mag, it.clean_mag, cfg.exponent);
      tape.backward(loss);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
      throw Error("divergence at step " + std::to_string(step) + ": " + e.what(),
                  ErrorCode::kNonFinite);
    }
    const double value = static_cast<double>(loss.item());
    ad::clip_grad_norm(params, cfg.clip);
    opt.step(lr);
    res.losses.push_back(value);
    res.log_lines.push_back(loss_log_line(step, value, lr, false));
    if (log.is_open()) log << res.log_lines.back() << "\n";
  }

  if (!out.empty()) {
    finetune_checkpoint(res, cfg).save(out / "model.ckpt");
    std::ofstream acc(out / "access.log", std::ios::trunc);
    acc << "# config_hash=" << cfg.config_hash << "\n";
    for (const auto& id : res.accessed) acc << id << "\n";
  }
  return res;
}

/// Loads a fine-tuned model from its checkpoint; the architecture comes from
/// `cfg` (normally the configuration the model was trained with).
template <class T>
EnhancementModel<T> load_enhancement_model(const FinetuneConfig& cfg,
                                           const std::filesystem::path& ckpt_path) {
  FinetuneConfig c = cfg;
  const auto ck = Checkpoint::load(ckpt_path);
  EnhancementModel<T> m;
  m.stft = c.stft;
  m.layer = c.layer;
  if (c.backbone_checkpoint) {
    m.backbone.emplace(c.backbone, 0);
    load_params(m.backbone->params, ck);
  }
  m.head = EnhancementHead<T>(c.head_config(), 0);
  load_params(m.head.params, ck, true,
              m.backbone ? std::vector<std::string>{"meta.", "cnn.", "blocks.", "mask_emb"}
                         : std::vector<std::string>{"meta."});
  if (ck.has("meta.dsp_hash") &&
      ck.i64("meta.dsp_hash") != hash_as_i64(std::stoull(dsp_hash(c.stft, c.fbank), nullptr, 16)))
    throw Error("model was trained with a different DSP configuration", ErrorCode::kConfig);
  return m;
}

}  // namespace sslse
