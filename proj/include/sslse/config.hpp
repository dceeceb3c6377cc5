// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// `key = value` run configuration. Every key has a default; unknown keys are
// rejected. The resolved configuration is serialised in sorted key order and
// hashed so artifacts can name the exact settings that produced them.

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sslse/common.hpp"
#include "sslse/dsp.hpp"
#include "sslse/models.hpp"

namespace sslse {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* doc;
};

// clang-format off
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
    {"seed", "0", "master seed; --seed overrides"},
    {"precision", "f32", "f32 or f64 for training and inference"},
    {"workers", "1", "worker threads for simulation and evaluation"},

    {"dsp.window", "400", "STFT window length in samples (periodic Hann)"},
    {"dsp.hop", "160", "STFT hop in samples"},
    {"dsp.fft", "512", "FFT size (power of two)"},
    {"dsp.mels", "80", "mel channels of the fbank targets"},
    {"dsp.fmin", "0", "lowest mel edge in Hz"},
    {"dsp.fmax", "8000", "highest mel edge in Hz"},

    {"synth.speech_clips", "16", "synthetic speech clips"},
    {"synth.noise_clips", "8", "synthetic noise clips"},
    {"synth.speech_seconds", "1.0", "length of each synthetic speech clip"},
    {"synth.noise_seconds", "3.0", "length of each synthetic noise clip"},

    {"simulate.pairs", "100", "noisy/clean pairs to simulate"},
    {"simulate.snr_min", "-5", "lower SNR bound in dB"},
    {"simulate.snr_max", "20", "upper SNR bound in dB"},
    {"simulate.fixed_snr", "none", "fixed SNR in dB instead of the uniform draw"},
    {"simulate.full_overlap", "true", "noise crop covers the whole utterance"},

    {"condition.speech_hours", "none", "speech-hour limit for fine-tuning data"},
    {"condition.noise_fraction", "none", "fraction of noise clips kept"},

    {"backbone.cnn", "32/16/8,64/40/40", "conv layers as channels/kernel/stride"},
    {"backbone.model_dim", "64", "transformer width"},
    {"backbone.blocks", "3", "transformer blocks"},
    {"backbone.heads", "4", "attention heads"},
    {"backbone.ffn_dim", "128", "feed-forward width"},
    {"backbone.rel_pos_buckets", "32", "relative position buckets"},
    {"backbone.rel_pos_max_distance", "64", "offset beyond which buckets clip"},
    {"backbone.rel_pos", "true", "enable the gated relative position bias"},

    {"mask.p", "0.065", "span start probability"},
    {"mask.span", "10", "span length in SSL frames"},

    {"quantizer.classes", "64", "k-means classes for the classification objective"},
    {"quantizer.iters", "25", "Lloyd iterations"},

    {"pretrain.objective", "regression", "classification or regression"},
    {"pretrain.noise_mixing", "false", "mix extra noise into pre-training input"},
    {"pretrain.p_mix", "0.1", "probability of mixing noise into one utterance"},
    {"pretrain.snr_min", "-5", "lower SNR bound of pre-training noise mixing"},
    {"pretrain.snr_max", "20", "upper SNR bound of pre-training noise mixing"},
    {"pretrain.steps", "200", "optimizer steps"},
    {"pretrain.batch_utts", "1", "utterances per step"},
    {"pretrain.lr", "5e-4", "peak learning rate"},
    {"pretrain.warmup", "0.1", "warm-up fraction of the steps"},
    {"pretrain.clip", "5", "global gradient-norm clip"},
    {"pretrain.tau", "0.1", "cosine logit temperature"},
    {"pretrain.proj_dim", "32", "projection and class-embedding width"},

    {"finetune.backbone", "none", "backbone checkpoint path, or none for the baseline"},
    {"finetune.freeze_backbone", "true", "keep backbone weights fixed"},
    {"finetune.layer", "last", "last or weighted backbone layer input"},
    {"finetune.steps", "500", "optimizer steps"},
    {"finetune.lr", "1e-3", "peak learning rate"},
    {"finetune.warmup", "0.1", "warm-up fraction of the steps"},
    {"finetune.clip", "5", "global gradient-norm clip"},
    {"finetune.exponent", "1.0", "magnitude compression exponent of the loss"},

    {"head.layers", "2", "bi-directional LSTM layers"},
    {"head.hidden", "128", "LSTM units per direction"},
    {"head.log_floor", "1e-3", "floor inside the log of the magnitude input"},
  };
  return keys;
}
// clang-format on

class Config {
 public:
  Config() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  static bool known(const std::string& key) {
    for (const auto& k : config_keys())
      if (key == k.name) return true;
    return false;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw Error("unknown config key: " + key, ErrorCode::kConfig);
    values_[key] = value;
  }

  /// Applies `key = value` lines; `#` starts a comment.
  void merge_text(const std::string& text, const std::string& origin = "<config>") {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(origin + ":" + std::to_string(lineno) + ": expected key = value",
                    ErrorCode::kConfig);
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string(), ErrorCode::kIo);
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path.string());
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error("unknown config key: " + key, ErrorCode::kConfig);
    return it->second;
  }

  double num(const std::string& key) const { return parse_double(str(key), key); }
  std::int64_t integer(const std::string& key) const { return parse_int(str(key), key); }

  std::size_t count(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) throw Error(key + " must be non-negative", ErrorCode::kConfig);
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error(key + " must be true or false, got '" + v + "'", ErrorCode::kConfig);
  }

  /// Numeric value, or nullopt for "none".
  std::optional<double> optional_num(const std::string& key) const {
    if (str(key) == "none") return std::nullopt;
    return num(key);
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  std::uint64_t hash() const { return fnv1a(serialize()); }
  std::string hash_hex() const { return hex64(hash()); }

  /// Writes the resolved configuration with a comment naming its hash.
  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string(), ErrorCode::kIo);
    out << "# config_hash=" << hash_hex() << "\n" << serialize();
  }

 private:
  std::map<std::string, std::string> values_;
};

/// Reference text listing every key, its default and a description.
inline std::string config_reference() {
  std::string out;
  for (const auto& k : config_keys())
    out += std::string("# ") + k.doc + "\n" + k.name + " = " + k.default_value + "\n";
  return out;
}

inline StftConfig stft_config(const Config& c) {
  StftConfig s;
  s.window_len = static_cast<int>(c.integer("dsp.window"));
  s.hop = static_cast<int>(c.integer("dsp.hop"));
  s.fft_size = static_cast<int>(c.integer("dsp.fft"));
  validate(s);
  return s;
}

inline FbankConfig fbank_config(const Config& c) {
  FbankConfig f;
  f.n_mels = static_cast<int>(c.integer("dsp.mels"));
  f.fmin = c.num("dsp.fmin");
  f.fmax = c.num("dsp.fmax");
  check(f.n_mels >= 1 && f.fmin >= 0.0 && f.fmax > f.fmin && f.fmax <= 8000.0,
        "invalid mel filterbank settings", ErrorCode::kConfig);
  return f;
}

/// Hash of everything that fixes the time-frequency representation.
inline std::string dsp_hash(const StftConfig& s, const FbankConfig& f) {
  const std::string d = std::to_string(s.window_len) + "/" + std::to_string(s.hop) + "/" +
                        std::to_string(s.fft_size) + "/" + std::to_string(f.n_mels) + "/" +
                        format_fixed(f.fmin, 3) + "/" + format_fixed(f.fmax, 3);
  return hex64(fnv1a(d));
}

inline std::string dsp_hash(const Config& c) { return dsp_hash(stft_config(c), fbank_config(c)); }

inline BackboneConfig backbone_config(const Config& c) {
  BackboneConfig b;
  b.cnn_layers.clear();
  for (const auto& layer : split(c.str("backbone.cnn"), ',')) {
    const auto parts = split(trim(layer), '/');
    if (parts.size() != 3)
      throw Error("backbone.cnn: expected channels/kernel/stride, got '" + layer + "'",
                  ErrorCode::kConfig);
    ConvSpec s{};
    s.out_channels = static_cast<std::size_t>(parse_int(parts[0], "backbone.cnn channels"));
    s.kernel = static_cast<std::size_t>(parse_int(parts[1], "backbone.cnn kernel"));
    s.stride = static_cast<std::size_t>(parse_int(parts[2], "backbone.cnn stride"));
    check(s.out_channels > 0 && s.kernel > 0 && s.stride > 0, "backbone.cnn: zero entry",
          ErrorCode::kConfig);
    b.cnn_layers.push_back(s);
  }
  b.model_dim = c.count("backbone.model_dim");
  b.num_blocks = c.count("backbone.blocks");
  b.num_heads = c.count("backbone.heads");
  b.ffn_dim = c.count("backbone.ffn_dim");
  b.rel_pos_buckets = c.count("backbone.rel_pos_buckets");
  b.rel_pos_max_distance = c.count("backbone.rel_pos_max_distance");
  b.rel_pos = c.flag("backbone.rel_pos");
  b.validate();
  return b;
}

/// SSL frames per STFT frame implied by the backbone stride and STFT hop.
inline int duplication_factor(const BackboneConfig& b, const StftConfig& s) {
  const std::size_t stride = b.total_stride();
  if (stride % static_cast<std::size_t>(s.hop) != 0)
    throw Error("backbone stride " + std::to_string(stride) + " is not a multiple of the STFT hop " +
                    std::to_string(s.hop),
                ErrorCode::kConfig);
  return static_cast<int>(stride / static_cast<std::size_t>(s.hop));
}

}  // namespace sslse
