// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sslse/common.hpp"

namespace sslse {

constexpr int kSampleRate = 16000;

struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  AudioBuffer() = default;
  explicit AudioBuffer(std::vector<double> s, int sr = kSampleRate)
      : samples(std::move(s)), sample_rate(sr) {}

  std::size_t size() const { return samples.size(); }
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

inline void check_finite(std::span<const double> x, const std::string& what) {
  for (double v : x)
    check(std::isfinite(v), what + ": non-finite sample", ErrorCode::kNonFinite);
}

struct StftConfig {
  int window_len = 400;
  int hop = 160;
  int fft_size = 512;

  int bins() const { return fft_size / 2 + 1; }
  std::uint64_t hash() const {
    const std::string s = std::to_string(window_len) + "/" +
                          std::to_string(hop) + "/" + std::to_string(fft_size);
    return fnv1a(s);
  }
};

struct ComplexSpectrogram {
  Matrix<std::complex<double>> values;  // frames x bins
  StftConfig config;
  std::size_t num_samples = 0;

  std::size_t frames() const { return values.rows; }
  std::size_t bins() const { return values.cols; }
};

using MagnitudeSpectrogram = Matrix<double>;
using FbankFeatures = Matrix<double>;

// ---------------------------------------------------------------------------
// FFT
// ---------------------------------------------------------------------------

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

/// In-place iterative radix-2 FFT. `inverse` applies the 1/n scaling.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  check(is_pow2(n), "fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1 : -1);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * static_cast<double>(k)),
                                     std::sin(ang * static_cast<double>(k)));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= static_cast<double>(n);
}

/// Periodic Hann window.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

inline void validate(const StftConfig& cfg) {
  check(cfg.window_len > 0 && cfg.hop > 0, "stft: window and hop must be positive");
  check(cfg.window_len <= cfg.fft_size, "stft: window_len exceeds fft_size");
  check(cfg.hop <= cfg.window_len, "stft: hop exceeds window_len");
  check(is_pow2(static_cast<std::size_t>(cfg.fft_size)),
        "stft: fft_size must be a power of two");
}

inline std::size_t stft_frames(std::size_t num_samples, const StftConfig& cfg) {
  const auto w = static_cast<std::size_t>(cfg.window_len);
  if (num_samples < w) return 0;
  return (num_samples - w) / static_cast<std::size_t>(cfg.hop) + 1;
}

/// Frames start at sample 0 (no center padding).
inline ComplexSpectrogram stft(const AudioBuffer& audio,
                               const StftConfig& cfg = {}) {
  validate(cfg);
  check_finite(audio.samples, "stft");
  check(audio.size() >= static_cast<std::size_t>(cfg.window_len),
        "utterance too short");
  const std::size_t frames = stft_frames(audio.size(), cfg);
  const auto bins = static_cast<std::size_t>(cfg.bins());
  const auto win = hann_window(cfg.window_len);

  ComplexSpectrogram spec;
  spec.config = cfg;
  spec.num_samples = audio.size();
  spec.values = Matrix<std::complex<double>>(frames, bins);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    const std::size_t start = t * static_cast<std::size_t>(cfg.hop);
    for (std::size_t i = 0; i < win.size(); ++i)
      buf[i] = audio.samples[start + i] * win[i];
    fft_inplace(buf, false);
    std::copy_n(buf.begin(), bins, spec.values.row(t));
  }
  return spec;
}

/// Sample range [begin, end) whose reconstruction is covered by the full set
/// of overlapping windows.
struct SampleRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline SampleRange interior_range(std::size_t frames, const StftConfig& cfg) {
  if (frames == 0) return {};
  const auto w = static_cast<std::size_t>(cfg.window_len);
  const std::size_t last = (frames - 1) * static_cast<std::size_t>(cfg.hop);
  if (last < w) return {w, w};
  return {w, last + 1};
}

/// Summed squared window below which istft cannot normalise a sample.
constexpr double kOverlapAddFloor = 1e-3;

/// Weighted overlap-add with the analysis window reused for synthesis and
/// per-sample normalisation by the summed squared window.
inline AudioBuffer istft(const ComplexSpectrogram& spec) {
  const StftConfig& cfg = spec.config;
  validate(cfg);
  check(spec.bins() == static_cast<std::size_t>(cfg.bins()),
        "istft: bins inconsistent with fft_size");
  const std::size_t frames = spec.frames();
  if (frames == 0) return AudioBuffer{};
  const auto w = static_cast<std::size_t>(cfg.window_len);
  const auto hop = static_cast<std::size_t>(cfg.hop);
  const auto n_fft = static_cast<std::size_t>(cfg.fft_size);
  const std::size_t out_len = (frames - 1) * hop + w;
  const auto win = hann_window(cfg.window_len);

  std::vector<double> num(out_len, 0.0), den(out_len, 0.0);
  std::vector<std::complex<double>> buf(n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto* row = spec.values.row(t);
    for (std::size_t k = 0; k < spec.bins(); ++k) buf[k] = row[k];
    for (std::size_t k = spec.bins(); k < n_fft; ++k)
      buf[k] = std::conj(row[n_fft - k]);
    // Real signal: DC and Nyquist bins carry no imaginary part.
    buf[0] = {buf[0].real(), 0.0};
    buf[n_fft / 2] = {buf[n_fft / 2].real(), 0.0};
    fft_inplace(buf, true);
    const std::size_t start = t * hop;
    for (std::size_t i = 0; i < w; ++i) {
      num[start + i] += buf[i].real() * win[i];
      den[start + i] += win[i] * win[i];
    }
  }

  const SampleRange interior = interior_range(frames, cfg);
  std::vector<double> out(std::max(out_len, spec.num_samples), 0.0);
  for (std::size_t i = 0; i < out_len; ++i) {
    if (i >= interior.begin && i < interior.end)
      check(den[i] > kOverlapAddFloor,
            "window does not satisfy reconstruction condition");
    out[i] = num[i] / std::max(den[i], kOverlapAddFloor);
  }
  return AudioBuffer(std::move(out));
}

inline MagnitudeSpectrogram magnitude(const ComplexSpectrogram& spec) {
  MagnitudeSpectrogram m(spec.frames(), spec.bins());
  for (std::size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = std::abs(spec.values.data[i]);
  return m;
}

/// Unit-magnitude phase of each cell; zero cells map to phase 0.
inline Matrix<std::complex<double>> phase(const ComplexSpectrogram& spec) {
  Matrix<std::complex<double>> p(spec.frames(), spec.bins());
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double a = std::abs(spec.values.data[i]);
    p.data[i] = a > 0.0 ? spec.values.data[i] / a : std::complex<double>(1.0, 0.0);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Mel filterbank (HTK mel scale, triangular filters, unit-area rows)
// ---------------------------------------------------------------------------

struct FbankConfig {
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double floor_eps = 1e-10;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

/// Centre frequency (Hz) of filter k.
inline double mel_center_hz(const FbankConfig& cfg, int k) {
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  return mel_to_hz(lo + (hi - lo) * (k + 1) / (cfg.n_mels + 1));
}

/// n_mels x bins matrix; each row sums to one.
inline Matrix<double> mel_filterbank(const FbankConfig& cfg, int fft_size,
                                     int sample_rate = kSampleRate) {
  check(cfg.n_mels > 0, "fbank: n_mels must be positive");
  check(cfg.fmin >= 0.0 && cfg.fmin < cfg.fmax && cfg.fmax <= sample_rate / 2.0,
        "fbank: require 0 <= fmin < fmax <= sample_rate/2");
  const int bins = fft_size / 2 + 1;
  const double mlo = hz_to_mel(cfg.fmin), mhi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mlo + (mhi - mlo) * i / (cfg.n_mels + 1));

  Matrix<double> fb(static_cast<std::size_t>(cfg.n_mels), static_cast<std::size_t>(bins));
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double c = edges[static_cast<std::size_t>(m + 1)];
    const double hi = edges[static_cast<std::size_t>(m + 2)];
    double sum = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / fft_size;
      const double wgt = std::max(0.0, std::min((f - lo) / (c - lo), (hi - f) / (hi - c)));
      fb(static_cast<std::size_t>(m), static_cast<std::size_t>(k)) = wgt;
      sum += wgt;
    }
    check(sum > 0.0, "fbank: filter " + std::to_string(m) + " covers no FFT bin");
    for (int k = 0; k < bins; ++k)
      fb(static_cast<std::size_t>(m), static_cast<std::size_t>(k)) /= sum;
  }
  return fb;
}

/// log(max(power . filterbank^T, floor_eps)).
inline FbankFeatures log_mel_fbank(const MagnitudeSpectrogram& mag,
                                   const Matrix<double>& filterbank,
                                   double floor_eps = 1e-10) {
  check(filterbank.cols == mag.cols, "fbank: filterbank/spectrogram bin mismatch",
        ErrorCode::kShapeMismatch);
  FbankFeatures out(mag.rows, filterbank.rows);
  for (std::size_t t = 0; t < mag.rows; ++t) {
    const double* m = mag.row(t);
    for (std::size_t c = 0; c < filterbank.rows; ++c) {
      const double* f = filterbank.row(c);
      double acc = 0.0;
      for (std::size_t k = 0; k < mag.cols; ++k) acc += m[k] * m[k] * f[k];
      out(t, c) = std::log(std::max(acc, floor_eps));
    }
  }
  return out;
}

inline FbankFeatures log_mel_fbank(const MagnitudeSpectrogram& mag,
                                   const FbankConfig& cfg, int fft_size) {
  return log_mel_fbank(mag, mel_filterbank(cfg, fft_size), cfg.floor_eps);
}

// ---------------------------------------------------------------------------
// Frame-rate alignment
// ---------------------------------------------------------------------------

/// Repeats every row `factor` times, then truncates or edge-pads to exactly
/// target_frames rows.
template <class T>
Matrix<T> duplicate_frames(const Matrix<T>& features, int factor,
                           std::size_t target_frames) {
  check(factor >= 1, "duplicate_frames: factor must be >= 1");
  check(features.rows > 0, "duplicate_frames: empty input");
  const auto f = static_cast<std::size_t>(factor);
  check(target_frames <= features.rows * f + f, "alignment gap too large");
  Matrix<T> out(target_frames, features.cols);
  for (std::size_t t = 0; t < target_frames; ++t) {
    const std::size_t src = std::min(t / f, features.rows - 1);
    std::copy_n(features.row(src), features.cols, out.row(t));
  }
  return out;
}

/// Row indices produced by duplicate_frames, for callers that gather rows of
/// a differentiable tensor.
inline std::vector<std::size_t> duplicate_indices(std::size_t frames, int factor,
                                                  std::size_t target_frames) {
  check(factor >= 1, "duplicate_frames: factor must be >= 1");
  check(frames > 0, "duplicate_frames: empty input");
  const auto f = static_cast<std::size_t>(factor);
  check(target_frames <= frames * f + f, "alignment gap too large");
  std::vector<std::size_t> idx(target_frames);
  for (std::size_t t = 0; t < target_frames; ++t) idx[t] = std::min(t / f, frames - 1);
  return idx;
}

/// Keeps every factor-th row starting at row 0.
template <class T>
Matrix<T> decimate_frames(const Matrix<T>& features, int factor) {
  check(factor >= 1, "decimate_frames: factor must be >= 1");
  const auto f = static_cast<std::size_t>(factor);
  const std::size_t rows = (features.rows + f - 1) / f;
  Matrix<T> out(rows, features.cols);
  for (std::size_t t = 0; t < rows; ++t)
    std::copy_n(features.row(t * f), features.cols, out.row(t));
  return out;
}

inline double mean_square(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

}  // namespace sslse
