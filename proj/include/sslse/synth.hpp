// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Built-in stand-in corpus so the whole pipeline runs without external data.
// "Speech" clips are voiced harmonic sources with gliding pitch, a formant-
// like spectral envelope and a syllabic amplitude envelope; "noise" clips are
// coloured Gaussian noise with a slow level drift, optionally with hum.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "sslse/common.hpp"
#include "sslse/dsp.hpp"
#include "sslse/mixsim.hpp"
#include "sslse/wav.hpp"

namespace sslse {

inline AudioBuffer synth_speech(std::uint64_t seed, double seconds) {
  Rng rng(seed);
  const std::size_t n = seconds_to_samples(seconds);
  std::vector<double> x(n, 0.0);
  const double f0_start = rng.uniform(100.0, 240.0);
  const double f0_end = f0_start * rng.uniform(0.75, 1.3);
  const double vibrato = rng.uniform(2.0, 6.0);
  const double syll_rate = rng.uniform(2.5, 5.0);
  const double syll_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double formant1 = rng.uniform(400.0, 900.0);
  const double formant2 = rng.uniform(1100.0, 2600.0);
  const double level = rng.uniform(0.04, 0.1);
  const int harmonics = 30;
  std::vector<double> phases(harmonics);
  for (auto& p : phases) p = rng.uniform(0.0, 2.0 * M_PI);

  double f0_phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    const double frac = static_cast<double>(i) / static_cast<double>(n);
    const double f0 = (f0_start + (f0_end - f0_start) * frac) * (1.0 + 0.02 * std::sin(2.0 * M_PI * vibrato * t));
    f0_phase += 2.0 * M_PI * f0 / kSampleRate;
    double v = 0.0;
    for (int h = 1; h <= harmonics; ++h) {
      const double fh = f0 * h;
      if (fh > 7800.0) break;
      const double env = std::exp(-0.5 * std::pow((fh - formant1) / 250.0, 2)) +
                         0.6 * std::exp(-0.5 * std::pow((fh - formant2) / 400.0, 2)) + 0.05;
      v += env / std::sqrt(static_cast<double>(h)) * std::sin(h * f0_phase + phases[static_cast<std::size_t>(h - 1)]);
    }
    const double syll = 0.55 + 0.45 * std::sin(2.0 * M_PI * syll_rate * t + syll_phase);
    x[i] = level * syll * syll * v;
  }
  // Normalise to the drawn RMS level.
  const double rms = std::sqrt(mean_square(x));
  if (rms > 0.0)
    for (auto& v : x) v *= level / rms;
  return AudioBuffer(std::move(x));
}

inline AudioBuffer synth_noise(std::uint64_t seed, double seconds) {
  Rng rng(seed);
  const std::size_t n = seconds_to_samples(seconds);
  std::vector<double> x(n);
  // Two one-pole filters give a random tilt between low-pass and high-pass.
  const double a_lp = rng.uniform(0.0, 0.95);
  const double hp_mix = rng.uniform(0.0, 0.7);
  const double level = rng.uniform(0.03, 0.08);
  const double drift_rate = rng.uniform(0.2, 1.5);
  const bool hum = rng.bernoulli(0.3);
  const double hum_f = rng.uniform(50.0, 400.0);
  double lp = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.normal();
    lp = a_lp * lp + (1.0 - a_lp) * w;
    const double hp = w - prev;
    prev = w;
    const double t = static_cast<double>(i) / kSampleRate;
    double v = (1.0 - hp_mix) * lp + hp_mix * hp;
    if (hum) v += 0.3 * std::sin(2.0 * M_PI * hum_f * t);
    x[i] = v * (1.0 + 0.3 * std::sin(2.0 * M_PI * drift_rate * t));
  }
  const double rms = std::sqrt(mean_square(x));
  for (auto& v : x) v *= level / rms;
  return AudioBuffer(std::move(x));
}

struct SynthOptions {
  std::size_t speech_clips = 16;
  std::size_t noise_clips = 8;
  double speech_seconds = 1.0;
  double noise_seconds = 3.0;
};

struct SynthCorpus {
  DatasetManifest speech;
  DatasetManifest noise;
};

/// Writes speech/*.wav, noise/*.wav, speech.tsv and noise.tsv under out_dir.
inline SynthCorpus write_synthetic_corpus(const fs::path& out_dir, const SynthOptions& opt,
                                          std::uint64_t seed, const std::string& header = {}) {
  std::error_code ec;
  fs::create_directories(out_dir / "speech", ec);
  fs::create_directories(out_dir / "noise", ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message(), ErrorCode::kIo);
  SynthCorpus c;
  c.speech.base_dir = c.noise.base_dir = out_dir;
  for (std::size_t i = 0; i < opt.speech_clips; ++i) {
    const std::string id = "spk" + std::to_string(i);
    const fs::path rel = fs::path("speech") / (id + ".wav");
    const AudioBuffer a = synth_speech(derive_seed(seed, 2 * i), opt.speech_seconds);
    write_wav(out_dir / rel, a);
    c.speech.entries.push_back({id, rel, samples_to_seconds(a.size()), ClipKind::kSpeech});
  }
  for (std::size_t i = 0; i < opt.noise_clips; ++i) {
    const std::string id = "noise" + std::to_string(i);
    const fs::path rel = fs::path("noise") / (id + ".wav");
    const AudioBuffer a = synth_noise(derive_seed(seed, 2 * i + 1), opt.noise_seconds);
    write_wav(out_dir / rel, a);
    c.noise.entries.push_back({id, rel, samples_to_seconds(a.size()), ClipKind::kNoise});
  }
  write_manifest(out_dir / "speech.tsv", c.speech, header);
  write_manifest(out_dir / "noise.tsv", c.noise, header);
  return c;
}

}  // namespace sslse
