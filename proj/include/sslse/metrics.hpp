// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Signal metrics, mask-based enhancement and the evaluation report.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sslse/dsp.hpp"
#include "sslse/mixsim.hpp"
#include "sslse/objectives.hpp"
#include "sslse/wav.hpp"

namespace sslse {

constexpr double kSdrCapDb = 100.0;

/// 10 log10(|s|^2 / |s - s_hat|^2) over the common length, capped at 100 dB.
inline double sdr(const AudioBuffer& ref, const AudioBuffer& est) {
  const std::size_t n = std::min(ref.size(), est.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += ref.samples[i] * ref.samples[i];
    const double e = ref.samples[i] - est.samples[i];
    den += e * e;
  }
  if (!(num > 0.0)) throw Error("sdr: reference has zero energy", ErrorCode::kInvalidArgument);
  if (!std::isfinite(den)) throw Error("sdr: non-finite estimate", ErrorCode::kNonFinite);
  if (den <= 0.0) return kSdrCapDb;
  return std::min(kSdrCapDb, 10.0 * std::log10(num / den));
}

/// Scale-invariant SDR: the estimate is compared with its projection on the
/// reference.
inline double si_sdr(const AudioBuffer& ref, const AudioBuffer& est) {
  const std::size_t n = std::min(ref.size(), est.size());
  double rr = 0.0, re = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    rr += ref.samples[i] * ref.samples[i];
    re += ref.samples[i] * est.samples[i];
  }
  if (!(rr > 0.0)) throw Error("si_sdr: reference has zero energy", ErrorCode::kInvalidArgument);
  const double a = re / rr;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = a * ref.samples[i];
    num += t * t;
    den += (t - est.samples[i]) * (t - est.samples[i]);
  }
  if (den <= 0.0) return kSdrCapDb;
  if (num <= 0.0) return -kSdrCapDb;
  return std::clamp(10.0 * std::log10(num / den), -kSdrCapDb, kSdrCapDb);
}

/// clamp(|S| / max(|X|, 1e-10), 0, 1) per cell.
inline Matrix<double> oracle_magnitude_mask(const MagnitudeSpectrogram& noisy,
                                            const MagnitudeSpectrogram& clean) {
  check(noisy.rows == clean.rows && noisy.cols == clean.cols,
        "oracle mask: noisy " + std::to_string(noisy.rows) + "x" + std::to_string(noisy.cols) +
            " vs clean " + std::to_string(clean.rows) + "x" + std::to_string(clean.cols),
        ErrorCode::kShapeMismatch);
  Matrix<double> m(noisy.rows, noisy.cols);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = std::clamp(clean.data[i] / std::max(noisy.data[i], 1e-10), 0.0, 1.0);
  return m;
}

/// Applies a magnitude mask to the noisy STFT (keeping the noisy phase) and
/// resynthesises a waveform of the input length. Samples no frame can
/// reconstruct (summed squared window at or below the overlap-add floor, or
/// past the last frame) keep their noisy value.
inline AudioBuffer apply_magnitude_mask(const ComplexSpectrogram& noisy_spec, const Matrix<double>& mask,
                                        const AudioBuffer& noisy) {
  check(mask.rows == noisy_spec.frames() && mask.cols == noisy_spec.bins(),
        "mask shape " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
            " does not match spectrogram " + std::to_string(noisy_spec.frames()) + "x" +
            std::to_string(noisy_spec.bins()),
        ErrorCode::kShapeMismatch);
  check(noisy.size() == noisy_spec.num_samples, "noisy waveform does not match its spectrogram",
        ErrorCode::kShapeMismatch);
  ComplexSpectrogram s = noisy_spec;
  for (std::size_t i = 0; i < mask.data.size(); ++i) s.values.data[i] *= mask.data[i];
  AudioBuffer out = istft(s);
  out.samples.resize(noisy.size(), 0.0);

  const auto& cfg = noisy_spec.config;
  const auto win = hann_window(cfg.window_len);
  std::vector<double> den(noisy.size(), 0.0);
  for (std::size_t t = 0; t < noisy_spec.frames(); ++t)
    for (std::size_t i = 0; i < win.size(); ++i)
      den[t * static_cast<std::size_t>(cfg.hop) + i] += win[i] * win[i];
  for (std::size_t i = 0; i < den.size(); ++i)
    if (den[i] <= kOverlapAddFloor) out.samples[i] = noisy.samples[i];
  return out;
}

enum class EnhanceMode { kModel, kOracle, kIdentity };

inline EnhanceMode parse_enhance_mode(const std::string& s) {
  if (s == "model") return EnhanceMode::kModel;
  if (s == "oracle") return EnhanceMode::kOracle;
  if (s == "identity") return EnhanceMode::kIdentity;
  throw Error("mode must be model, oracle or identity, got '" + s + "'", ErrorCode::kConfig);
}

/// Mask predictor: noisy waveform and its magnitude -> mask.
using MaskFn = std::function<Matrix<double>(const AudioBuffer&, const MagnitudeSpectrogram&)>;

/// Enhances one utterance. Oracle mode needs the clean reference; model mode
/// needs a predictor.
inline AudioBuffer enhance_utterance(const AudioBuffer& noisy, EnhanceMode mode,
                                     const StftConfig& stft_cfg, const MaskFn& model = {},
                                     const AudioBuffer* clean = nullptr) {
  const auto spec = stft(noisy, stft_cfg);
  const auto mag = magnitude(spec);
  Matrix<double> mask;
  switch (mode) {
    case EnhanceMode::kIdentity:
      mask = Matrix<double>(mag.rows, mag.cols);
      std::fill(mask.data.begin(), mask.data.end(), 1.0);
      break;
    case EnhanceMode::kOracle:
      if (clean == nullptr)
        throw Error("oracle enhancement needs the clean reference", ErrorCode::kInvalidArgument);
      mask = oracle_magnitude_mask(mag, magnitude(stft(*clean, stft_cfg)));
      break;
    case EnhanceMode::kModel:
      check(static_cast<bool>(model), "model enhancement needs a mask predictor",
            ErrorCode::kInvalidArgument);
      mask = model(noisy, mag);
      break;
  }
  return apply_magnitude_mask(spec, mask, noisy);
}

struct EvalRow {
  std::string pair_id;
  double sdr_noisy = 0.0;
  double sdr_enhanced = 0.0;
  double sdr_oracle = 0.0;
  double restoration_loss = 0.0;
  double si_sdr_enhanced = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string config_hash;
  std::string dsp_hash;

  double mean(double EvalRow::*field) const {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : rows) s += r.*field;
    return s / static_cast<double>(rows.size());
  }
};

struct EvalOptions {
  EnhanceMode mode = EnhanceMode::kModel;
  StftConfig stft;
  double exponent = 1.0;
  int workers = 1;
};

/// Scores every pair. Rows keep manifest order regardless of `workers`.
inline EvalReport evaluate(const PairedManifest& pairs, const EvalOptions& opt,
                           const MaskFn& model = {}) {
  check(pairs.size() > 0, "evaluate: empty paired manifest", ErrorCode::kInvalidArgument);
  if (opt.mode == EnhanceMode::kModel)
    check(static_cast<bool>(model), "evaluate: model mode needs a mask predictor",
          ErrorCode::kInvalidArgument);
  EvalReport rep;
  rep.rows.resize(pairs.size());
  parallel_for(pairs.size(), opt.workers, [&](std::size_t i) {
    const auto& e = pairs.entries[i];
    AudioBuffer noisy, clean;
    try {
      noisy = read_wav(pairs.resolve(e.noisy_path));
      clean = read_wav(pairs.resolve(e.clean_path));
    } catch (const Error& err) {
      throw Error("pair " + e.pair_id + ": " + err.what(), err.code());
    }
    if (noisy.size() != clean.size())
      throw Error("pair " + e.pair_id + ": noisy and clean lengths differ", ErrorCode::kShapeMismatch);
    const auto spec = stft(noisy, opt.stft);
    const auto mag = magnitude(spec);
    const auto clean_mag = magnitude(stft(clean, opt.stft));
    const auto oracle = oracle_magnitude_mask(mag, clean_mag);
    Matrix<double> mask;
    if (opt.mode == EnhanceMode::kOracle) {
      mask = oracle;
    } else if (opt.mode == EnhanceMode::kIdentity) {
      mask = Matrix<double>(mag.rows, mag.cols);
      std::fill(mask.data.begin(), mask.data.end(), 1.0);
    } else {
      mask = model(noisy, mag);
    }
    const AudioBuffer enhanced = apply_magnitude_mask(spec, mask, noisy);
    EvalRow r;
    r.pair_id = e.pair_id;
    r.sdr_noisy = sdr(clean, noisy);
    r.sdr_enhanced = sdr(clean, enhanced);
    r.sdr_oracle = sdr(clean, apply_magnitude_mask(spec, oracle, noisy));
    r.restoration_loss = restoration_loss_value(mask, mag, clean_mag, opt.exponent);
    r.si_sdr_enhanced = si_sdr(clean, enhanced);
    rep.rows[i] = r;
  });
  return rep;
}

inline std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10f", v);
  return buf;
}

/// Tab-separated report: a header, one row per pair, then `#AGG` means and a
/// `#META` line naming the configuration and DSP hashes.
inline std::string format_report(const EvalReport& rep) {
  std::string out = "pair_id\tsdr_noisy\tsdr_enhanced\tsdr_oracle\trestoration_loss\tsi_sdr_enhanced\n";
  for (const auto& r : rep.rows)
    out += r.pair_id + "\t" + format_metric(r.sdr_noisy) + "\t" + format_metric(r.sdr_enhanced) +
           "\t" + format_metric(r.sdr_oracle) + "\t" + format_metric(r.restoration_loss) + "\t" +
           format_metric(r.si_sdr_enhanced) + "\n";
  out += "#AGG\t" + format_metric(rep.mean(&EvalRow::sdr_noisy)) + "\t" +
         format_metric(rep.mean(&EvalRow::sdr_enhanced)) + "\t" +
         format_metric(rep.mean(&EvalRow::sdr_oracle)) + "\t" +
         format_metric(rep.mean(&EvalRow::restoration_loss)) + "\t" +
         format_metric(rep.mean(&EvalRow::si_sdr_enhanced)) + "\n";
  out += "#META\tconfig_hash=" + rep.config_hash + "\tdsp_hash=" + rep.dsp_hash + "\n";
  return out;
}

/// Parses a report written by format_report.
inline EvalReport parse_report(const std::string& text) {
  EvalReport rep;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      check(line.rfind("pair_id\t", 0) == 0, "report: missing header", ErrorCode::kIo);
      continue;
    }
    const auto f = split(line, '\t');
    if (f[0] == "#AGG") continue;
    if (f[0] == "#META") {
      for (std::size_t i = 1; i < f.size(); ++i) {
        if (f[i].rfind("config_hash=", 0) == 0) rep.config_hash = f[i].substr(12);
        if (f[i].rfind("dsp_hash=", 0) == 0) rep.dsp_hash = f[i].substr(9);
      }
      continue;
    }
    check(f.size() == 6, "report: expected 6 fields: " + line, ErrorCode::kIo);
    EvalRow r;
    r.pair_id = f[0];
    r.sdr_noisy = parse_double(f[1], "sdr_noisy");
    r.sdr_enhanced = parse_double(f[2], "sdr_enhanced");
    r.sdr_oracle = parse_double(f[3], "sdr_oracle");
    r.restoration_loss = parse_double(f[4], "restoration_loss");
    r.si_sdr_enhanced = parse_double(f[5], "si_sdr_enhanced");
    rep.rows.push_back(r);
  }
  return rep;
}

/// Per-pair differences b - a of the enhanced SDR. Reports produced under
/// different DSP settings are not comparable.
inline std::vector<double> compare_reports(const EvalReport& a, const EvalReport& b) {
  if (a.dsp_hash != b.dsp_hash)
    throw Error("reports use different DSP configurations (" + a.dsp_hash + " vs " + b.dsp_hash + ")",
                ErrorCode::kConfig);
  check(a.rows.size() == b.rows.size(), "reports cover different numbers of pairs",
        ErrorCode::kShapeMismatch);
  std::vector<double> d(a.rows.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    check(a.rows[i].pair_id == b.rows[i].pair_id,
          "reports list different pairs at row " + std::to_string(i), ErrorCode::kShapeMismatch);
    d[i] = b.rows[i].sdr_enhanced - a.rows[i].sdr_enhanced;
  }
  return d;
}

}  // namespace sslse
