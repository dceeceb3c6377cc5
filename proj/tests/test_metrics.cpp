// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "sslse/metrics.hpp"
#include "sslse/synth.hpp"

using namespace sslse;
namespace fs = std::filesystem;

namespace {

AudioBuffer random_buffer(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(-0.5, 0.5);
  return AudioBuffer(std::move(x));
}

AudioBuffer scaled(const AudioBuffer& a, double g) {
  AudioBuffer out = a;
  for (auto& v : out.samples) v *= g;
  return out;
}

struct Suite {
  fs::path dir;
  SynthCorpus corpus;
  PairedManifest pairs;
};

const Suite& suite() {
  static Suite s = [] {
    Suite s;
    s.dir = fs::temp_directory_path() / "sslse_test_metrics";
    fs::remove_all(s.dir);
    s.corpus = write_synthetic_corpus(s.dir / "corpus", {6, 3, 1.0, 2.0}, 21);
    s.pairs = simulate_corpus(s.corpus.speech, s.corpus.noise, 10, 22, s.dir / "pairs",
                              {{kSnrMinDb, kSnrMaxDb, std::nullopt, true}, 1, ""});
    return s;
  }();
  return s;
}

}  // namespace

TEST_CASE("sdr examples", "[metrics][sdr]") {
  const auto ref = random_buffer(4000, 1);
  REQUIRE(sdr(ref, ref) == kSdrCapDb);
  REQUIRE(sdr(ref, scaled(ref, 0.5)) == Catch::Approx(10.0 * std::log10(4.0)).margin(1e-12));
  REQUIRE(sdr(ref, scaled(ref, 0.5)) == Catch::Approx(6.0206).margin(1e-4));
  for (double a : {0.5, 0.9, 2.0})
    REQUIRE(sdr(ref, scaled(ref, a)) == Catch::Approx(-20.0 * std::log10(std::abs(a - 1.0))).margin(1e-9));
  REQUIRE_THROWS_AS(sdr(AudioBuffer(std::vector<double>(100, 0.0)), ref), Error);
}

TEST_CASE("sdr trims to the common length", "[metrics][sdr]") {
  const auto ref = random_buffer(1000, 2);
  AudioBuffer longer = ref;
  longer.samples.resize(1100, 0.3);
  REQUIRE(sdr(ref, longer) == kSdrCapDb);
}

TEST_CASE("sdr of a mixture matches its overlap SNR", "[metrics][sdr]") {
  const auto clean = synth_speech(3, 1.0);
  const auto noise = synth_noise(4, 2.0);
  const ManifestEntry se{"s", "s.wav", clean.duration(), ClipKind::kSpeech};
  DatasetManifest nm;
  nm.entries.push_back({"n", "n.wav", noise.duration(), ClipKind::kNoise});
  for (double snr : {-5.0, 0.0, 10.0, 20.0}) {
    auto r = sample_recipe_for(5, se, nm, {kSnrMinDb, kSnrMaxDb, snr, true});
    const auto noisy = mix(clean, noise, r);
    REQUIRE(sdr(clean, noisy) == Catch::Approx(snr).margin(0.1));
  }
}

TEST_CASE("si-sdr ignores the estimate's scale", "[metrics][sdr]") {
  const auto ref = random_buffer(2000, 5);
  auto est = ref;
  Rng rng(6);
  for (auto& v : est.samples) v += 0.05 * rng.uniform(-1.0, 1.0);
  const double base = si_sdr(ref, est);
  REQUIRE(si_sdr(ref, scaled(est, 3.0)) == Catch::Approx(base).margin(1e-9));
  REQUIRE(si_sdr(ref, scaled(est, 0.2)) == Catch::Approx(base).margin(1e-9));
  REQUIRE(si_sdr(ref, ref) == kSdrCapDb);
}

TEST_CASE("oracle mask examples", "[metrics][oracle]") {
  Matrix<double> a(3, 4), z(3, 4);
  Rng rng(7);
  for (auto& v : a.data) v = rng.uniform(0.01, 2.0);
  for (double v : oracle_magnitude_mask(a, a).data) REQUIRE(v == 1.0);
  for (double v : oracle_magnitude_mask(a, z).data) REQUIRE(v == 0.0);
  for (double v : oracle_magnitude_mask(z, a).data) REQUIRE(v == 1.0);
  REQUIRE_THROWS_AS(oracle_magnitude_mask(a, Matrix<double>(3, 5)), Error);
}

TEST_CASE("oracle mask is locally optimal for the restoration loss", "[metrics][oracle]") {
  const auto clean = synth_speech(8, 1.0);
  const auto noise = synth_noise(9, 2.0);
  const ManifestEntry se{"s", "s.wav", clean.duration(), ClipKind::kSpeech};
  DatasetManifest nm;
  nm.entries.push_back({"n", "n.wav", noise.duration(), ClipKind::kNoise});
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = sample_recipe_for(derive_seed(11, trial), se, nm, {kSnrMinDb, kSnrMaxDb, std::nullopt, true});
    const auto noisy = mix(clean, noise, r);
    const auto nm_mag = magnitude(stft(noisy));
    const auto cm_mag = magnitude(stft(clean));
    const auto oracle = oracle_magnitude_mask(nm_mag, cm_mag);
    const double best = restoration_loss_value(oracle, nm_mag, cm_mag);
    auto m = oracle;
    for (int k = 0; k < 200; ++k) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(m.data.size()) - 1));
      m.data[i] = std::clamp(m.data[i] + (rng.bernoulli(0.5) ? 0.05 : -0.05), 0.0, 1.0);
    }
    REQUIRE(restoration_loss_value(m, nm_mag, cm_mag) >= best);
  }
}

TEST_CASE("oracle enhancement beats the noisy input on random mixtures", "[metrics][oracle]") {
  const auto& s = suite();
  AudioStore sp(s.corpus.speech), nz(s.corpus.noise);
  for (int k = 0; k < 100; ++k) {
    const auto r = sample_recipe(derive_seed(12, k), s.corpus.speech, s.corpus.noise,
                                 {kSnrMinDb, kSnrMaxDb, std::nullopt, true});
    const auto& clean = sp.get(r.clean_id);
    const auto noisy = mix(clean, nz.get(r.noise_id), r);
    const auto est = enhance_utterance(noisy, EnhanceMode::kOracle, {}, {}, &clean);
    REQUIRE(est.size() == noisy.size());
    REQUIRE(sdr(clean, est) > sdr(clean, noisy));
  }
}

TEST_CASE("identity and zero masks", "[metrics][enhance]") {
  const auto noisy = random_buffer(16000, 13);
  const StftConfig cfg;
  const auto out = enhance_utterance(noisy, EnhanceMode::kIdentity, cfg);
  REQUIRE(out.size() == noisy.size());
  const auto range = interior_range(stft_frames(noisy.size(), cfg), cfg);
  double err = 0.0, scale = 0.0;
  for (std::size_t i = range.begin; i < range.end; ++i) {
    err = std::max(err, std::abs(out.samples[i] - noisy.samples[i]));
    scale = std::max(scale, std::abs(noisy.samples[i]));
  }
  REQUIRE(err / scale < 1e-6);

  const auto zero = enhance_utterance(noisy, EnhanceMode::kModel, cfg,
                                      [](const AudioBuffer&, const MagnitudeSpectrogram& m) {
                                        return Matrix<double>(m.rows, m.cols);
                                      });
  for (std::size_t i = range.begin; i < range.end; ++i) REQUIRE(zero.samples[i] == 0.0);

  REQUIRE_THROWS_AS(enhance_utterance(noisy, EnhanceMode::kOracle, cfg), Error);
  REQUIRE_THROWS_AS(enhance_utterance(noisy, EnhanceMode::kModel, cfg), Error);
  REQUIRE_THROWS_AS(enhance_utterance(noisy, EnhanceMode::kModel, cfg,
                                      [](const AudioBuffer&, const MagnitudeSpectrogram&) {
                                        return Matrix<double>(3, 3);
                                      }),
                    Error);
}

TEST_CASE("evaluation report", "[metrics][evaluate]") {
  const auto& s = suite();
  EvalOptions opt;
  opt.mode = EnhanceMode::kIdentity;
  auto rep = evaluate(s.pairs, opt);
  REQUIRE(rep.rows.size() == 10);
  for (const auto& r : rep.rows) {
    REQUIRE(r.sdr_enhanced == Catch::Approx(r.sdr_noisy).margin(0.05));
    REQUIRE(r.sdr_oracle > r.sdr_noisy);
  }
  double sum = 0.0;
  for (const auto& r : rep.rows) sum += r.sdr_oracle;
  REQUIRE(std::abs(rep.mean(&EvalRow::sdr_oracle) - sum / 10.0) < 1e-9);

  rep.config_hash = "abc";
  rep.dsp_hash = "def";
  const auto text = format_report(rep);
  REQUIRE(text.rfind("pair_id\t", 0) == 0);
  REQUIRE(text.find("\n#AGG\t") != std::string::npos);
  const auto back = parse_report(text);
  REQUIRE(back.rows.size() == 10);
  REQUIRE(back.dsp_hash == "def");
  REQUIRE(format_report(back) == text);
}

TEST_CASE("evaluation is independent of the worker count", "[metrics][evaluate]") {
  const auto& s = suite();
  EvalOptions a, b;
  a.mode = b.mode = EnhanceMode::kOracle;
  b.workers = 3;
  REQUIRE(format_report(evaluate(s.pairs, a)) == format_report(evaluate(s.pairs, b)));
}

TEST_CASE("evaluation errors name the pair", "[metrics][evaluate]") {
  const auto& s = suite();
  PairedManifest broken = s.pairs;
  broken.entries[4].noisy_path = "does_not_exist.wav";
  EvalOptions opt;
  opt.mode = EnhanceMode::kOracle;
  try {
    evaluate(broken, opt);
    FAIL("expected an error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("pair " + broken.entries[4].pair_id) != std::string::npos);
  }
  opt.mode = EnhanceMode::kModel;
  REQUIRE_THROWS_AS(evaluate(s.pairs, opt), Error);
}

TEST_CASE("reports from different DSP settings are not compared", "[metrics][evaluate]") {
  EvalReport a, b;
  a.rows.push_back({"0", 1.0, 2.0, 3.0, 0.1, 2.0});
  b.rows.push_back({"0", 1.0, 2.5, 3.0, 0.1, 2.0});
  a.dsp_hash = b.dsp_hash = "x";
  REQUIRE(compare_reports(a, b)[0] == Catch::Approx(0.5));
  b.dsp_hash = "y";
  REQUIRE_THROWS_AS(compare_reports(a, b), Error);
}
