// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <filesystem>
#include <vector>

#include "sslse/dsp.hpp"
#include "sslse/wav.hpp"

using namespace sslse;
using Catch::Approx;

namespace {

AudioBuffer white_noise(std::uint64_t seed, std::size_t n, double scale = 0.3) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = scale * rng.normal();
  return AudioBuffer(std::move(x));
}

AudioBuffer sine(double hz, double amp, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * M_PI * hz * static_cast<double>(i) / kSampleRate);
  return AudioBuffer(std::move(x));
}

// Direct O(n^2) DFT of one windowed, zero-padded frame.
std::vector<std::complex<double>> direct_dft_frame(const AudioBuffer& a, std::size_t start, int win_len, int n_fft) {
  std::vector<std::complex<double>> out(static_cast<std::size_t>(n_fft / 2 + 1));
  for (int k = 0; k <= n_fft / 2; ++k) {
    std::complex<double> acc{};
    for (int i = 0; i < win_len; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win_len);
      const double ang = -2.0 * M_PI * k * i / n_fft;
      acc += a.samples[start + static_cast<std::size_t>(i)] * w * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

double interior_max_rel_error(const AudioBuffer& ref, const AudioBuffer& est, SampleRange r) {
  const double rms = std::sqrt(mean_square(ref.samples));
  double err = 0.0;
  for (std::size_t i = r.begin; i < r.end; ++i) err = std::max(err, std::abs(ref.samples[i] - est.samples[i]));
  return err / rms;
}

}  // namespace

TEST_CASE("stft frame count and zero input", "[dsp][stft]") {
  const AudioBuffer zeros(std::vector<double>(16000, 0.0));
  const auto spec = stft(zeros);
  REQUIRE(spec.frames() == 98);
  REQUIRE(spec.bins() == 257);
  for (const auto& c : spec.values.data) REQUIRE(c == std::complex<double>{});
}

TEST_CASE("stft matches a direct DFT and peaks at the tone bin", "[dsp][stft]") {
  const auto tone = sine(1000.0, 1.0, 16000);
  const auto spec = stft(tone);
  const auto mag = magnitude(spec);
  for (std::size_t t = 0; t < mag.rows; ++t) {
    const auto* row = mag.row(t);
    REQUIRE(std::max_element(row, row + mag.cols) - row == 32);
  }
  for (std::size_t t : {0u, 17u, 97u}) {
    const auto ref = direct_dft_frame(tone, t * 160, 400, 512);
    for (std::size_t k = 0; k < ref.size(); ++k)
      REQUIRE(std::abs(ref[k] - spec.values(t, k)) < 1e-9);
  }
}

TEST_CASE("stft rejects short or non-finite audio", "[dsp][stft]") {
  REQUIRE_THROWS_WITH(stft(AudioBuffer(std::vector<double>(399, 0.0))), "utterance too short");
  std::vector<double> x(1000, 0.0);
  x[10] = std::nan("");
  REQUIRE_THROWS_AS(stft(AudioBuffer(x)), Error);
  StftConfig bad;
  bad.window_len = 600;
  REQUIRE_THROWS_AS(stft(AudioBuffer(std::vector<double>(2000, 0.0)), bad), Error);
}

TEST_CASE("stft is linear", "[dsp][stft][property]") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto x = white_noise(s, 4000), y = white_noise(100 + s, 4000);
    AudioBuffer xy = x;
    for (std::size_t i = 0; i < xy.size(); ++i) xy.samples[i] += y.samples[i];
    const auto sx = stft(x), sy = stft(y), sxy = stft(xy);
    double scale = 0.0, err = 0.0;
    for (std::size_t i = 0; i < sxy.values.data.size(); ++i) {
      scale = std::max(scale, std::abs(sxy.values.data[i]));
      err = std::max(err, std::abs(sxy.values.data[i] - sx.values.data[i] - sy.values.data[i]));
    }
    REQUIRE(err / scale < 1e-9);
  }
}

TEST_CASE("windowed frame energy is preserved by the transform", "[dsp][stft][property]") {
  // Parseval for a zero-padded frame: sum_n |x_w[n]|^2 = (1/N) sum_k |X[k]|^2
  // over the full (two-sided) spectrum.
  const auto x = white_noise(7, 8000);
  const auto spec = stft(x);
  const auto win = hann_window(400);
  double time_e = 0.0, freq_e = 0.0;
  for (std::size_t t = 0; t < spec.frames(); ++t) {
    for (std::size_t i = 0; i < 400; ++i) {
      const double v = x.samples[t * 160 + i] * win[i];
      time_e += v * v;
    }
    for (std::size_t k = 0; k < spec.bins(); ++k) {
      const double p = std::norm(spec.values(t, k));
      freq_e += (k == 0 || k == 256) ? p : 2.0 * p;
    }
  }
  freq_e /= 512.0;
  REQUIRE(std::abs(time_e - freq_e) / time_e < 1e-6);
}

TEST_CASE("istft inverts stft on the interior", "[dsp][istft]") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto x = white_noise(s, 16000 + 37 * s);
    const auto spec = stft(x);
    const auto y = istft(spec);
    REQUIRE(y.size() >= x.size());
    REQUIRE(interior_max_rel_error(x, y, interior_range(spec.frames(), spec.config)) < 1e-6);
  }
}

TEST_CASE("istft handles hop = window/2 and window/4", "[dsp][istft]") {
  for (int hop : {200, 100}) {
    StftConfig cfg{400, hop, 512};
    const auto x = white_noise(3, 6000);
    const auto spec = stft(x, cfg);
    REQUIRE(interior_max_rel_error(x, istft(spec), interior_range(spec.frames(), cfg)) < 1e-6);
  }
}

TEST_CASE("istft of zeros is silent and restft reproduces magnitudes", "[dsp][istft]") {
  ComplexSpectrogram z;
  z.config = {};
  z.num_samples = 16000;
  z.values = Matrix<std::complex<double>>(98, 257);
  for (double v : istft(z).samples) REQUIRE(v == 0.0);

  const auto x = white_noise(11, 16000);
  const auto s1 = stft(x);
  const auto s2 = stft(istft(s1));
  const auto m1 = magnitude(s1), m2 = magnitude(s2);
  // Frames whose support lies fully inside the reconstructed interior.
  const auto r = interior_range(s1.frames(), s1.config);
  for (std::size_t t = 0; t < m1.rows; ++t) {
    if (t * 160 < r.begin || t * 160 + 400 > r.end) continue;
    double scale = 0.0, err = 0.0;
    for (std::size_t k = 0; k < m1.cols; ++k) {
      scale = std::max(scale, m1(t, k));
      err = std::max(err, std::abs(m1(t, k) - m2(t, k)));
    }
    REQUIRE(err / scale < 1e-6);
  }
}

TEST_CASE("magnitude is the complex modulus", "[dsp][magnitude]") {
  ComplexSpectrogram s;
  s.values = Matrix<std::complex<double>>(1, 2);
  s.values(0, 0) = {3.0, 4.0};
  REQUIRE(magnitude(s)(0, 0) == 5.0);
  REQUIRE(magnitude(s)(0, 1) == 0.0);

  const auto spec = stft(white_noise(5, 3000));
  const auto m = magnitude(spec);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    const auto c = spec.values.data[i];
    REQUIRE(std::abs(m.data[i] * m.data[i] - (c.real() * c.real() + c.imag() * c.imag())) <
            1e-12 * std::max(1.0, std::norm(c)));
  }
}

TEST_CASE("mel filterbank rows have unit area", "[dsp][fbank]") {
  const auto fb = mel_filterbank(FbankConfig{}, 512);
  REQUIRE(fb.rows == 80);
  REQUIRE(fb.cols == 257);
  for (std::size_t m = 0; m < fb.rows; ++m) {
    double s = 0.0;
    for (std::size_t k = 0; k < fb.cols; ++k) {
      REQUIRE(fb(m, k) >= 0.0);
      s += fb(m, k);
    }
    REQUIRE(s == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("log mel fbank floors silence and is monotone", "[dsp][fbank]") {
  const FbankConfig cfg;
  MagnitudeSpectrogram zero(4, 257, 0.0);
  const auto f0 = log_mel_fbank(zero, cfg, 512);
  REQUIRE(f0.cols == 80);
  for (double v : f0.data) REQUIRE(v == std::log(1e-10));

  const auto mag = magnitude(stft(white_noise(9, 4000)));
  MagnitudeSpectrogram louder = mag;
  for (auto& v : louder.data) v *= 1.7;
  const auto a = log_mel_fbank(mag, cfg, 512), b = log_mel_fbank(louder, cfg, 512);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    REQUIRE(std::isfinite(a.data[i]));
    REQUIRE(b.data[i] >= a.data[i]);
  }
}

TEST_CASE("a tone at a filter centre peaks in that filter", "[dsp][fbank]") {
  const FbankConfig cfg;
  const auto fb = mel_filterbank(cfg, 512);
  for (int k : {30, 45, 60, 75}) {
    const double hz = mel_center_hz(cfg, k);
    const auto feats = log_mel_fbank(magnitude(stft(sine(hz, 0.5, 4000))), fb);
    for (std::size_t t = 0; t < feats.rows; ++t) {
      const auto* row = feats.row(t);
      REQUIRE(std::max_element(row, row + feats.cols) - row == k);
    }
  }
}

TEST_CASE("duplicate_frames repeats, truncates and pads", "[dsp][align]") {
  Matrix<double> two(2, 1);
  two(0, 0) = 1.0;
  two(1, 0) = 2.0;
  auto d4 = duplicate_frames(two, 2, 4);
  REQUIRE(d4.data == std::vector<double>{1, 1, 2, 2});
  auto d3 = duplicate_frames(two, 2, 3);
  REQUIRE(d3.data == std::vector<double>{1, 1, 2});
  Matrix<double> one(1, 1, 7.0);
  REQUIRE(duplicate_frames(one, 2, 3).data == std::vector<double>{7, 7, 7});
  REQUIRE_THROWS_WITH(duplicate_frames(one, 2, 5), "alignment gap too large");
}

TEST_CASE("duplicate_frames output rows come from the input in order", "[dsp][align][property]") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto rows = static_cast<std::size_t>(rng.uniform_int(1, 20));
    const int factor = static_cast<int>(rng.uniform_int(1, 4));
    const auto target = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(rows) * factor + factor));
    Matrix<double> m(rows, 3);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < 3; ++c) m(r, c) = static_cast<double>(r);
    const auto d = duplicate_frames(m, factor, target);
    REQUIRE(d.rows == target);
    double prev = -1.0;
    for (std::size_t r = 0; r < d.rows; ++r) {
      REQUIRE(d(r, 0) >= prev);
      REQUIRE(d(r, 0) == d(r, 2));
      prev = d(r, 0);
    }
  }
}

TEST_CASE("wav round trip preserves 16-bit samples", "[dsp][wav]") {
  const auto dir = std::filesystem::temp_directory_path() / "sslse_test_wav";
  std::filesystem::create_directories(dir);
  std::vector<double> x{0.0, 0.5, -0.5, -1.0, 32767.0 / 32768.0, 1.5, -2.0};
  write_wav(dir / "a.wav", AudioBuffer(x));
  const auto a = read_wav(dir / "a.wav");
  REQUIRE(a.size() == x.size());
  REQUIRE(a.samples[1] == 0.5);
  REQUIRE(a.samples[3] == -1.0);
  REQUIRE(a.samples[4] == 32767.0 / 32768.0);
  REQUIRE(a.samples[5] == 32767.0 / 32768.0);  // clamped
  REQUIRE(a.samples[6] == -1.0);
  write_wav(dir / "b.wav", a);
  REQUIRE(read_wav(dir / "b.wav").samples == a.samples);
  REQUIRE_THROWS_AS(read_wav(dir / "missing.wav"), Error);
}
