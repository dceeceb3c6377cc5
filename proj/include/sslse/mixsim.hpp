// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Seeded noisy/clean pair synthesis and resource-condition subsetting.
//
// Recipes are sampled in whole samples and stored in seconds rounded to six
// decimals. At 16 kHz that rounding is below 0.01 sample, so a recipe read
// back from the text file maps onto exactly the same sample positions and the
// regenerated audio is bit-identical.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "sslse/common.hpp"
#include "sslse/dsp.hpp"
#include "sslse/wav.hpp"

namespace sslse {

namespace fs = std::filesystem;

enum class ClipKind { kSpeech, kNoise };

inline const char* to_string(ClipKind k) { return k == ClipKind::kSpeech ? "speech" : "noise"; }

inline ClipKind parse_kind(const std::string& s) {
  if (s == "speech") return ClipKind::kSpeech;
  if (s == "noise") return ClipKind::kNoise;
  throw Error("unknown clip kind '" + s + "'", ErrorCode::kInvalidArgument);
}

struct ManifestEntry {
  std::string clip_id;
  fs::path path;  // relative to the manifest's base directory
  double duration_s = 0.0;
  ClipKind kind = ClipKind::kSpeech;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  fs::path base_dir;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }

  fs::path resolve(const ManifestEntry& e) const {
    return e.path.is_absolute() ? e.path : base_dir / e.path;
  }

  const ManifestEntry& find(const std::string& id) const {
    for (const auto& e : entries)
      if (e.clip_id == id) return e;
    throw Error("clip '" + id + "' not in manifest", ErrorCode::kInvalidArgument);
  }

  double total_hours(std::optional<ClipKind> kind = std::nullopt) const {
    double s = 0.0;
    for (const auto& e : entries)
      if (!kind || e.kind == *kind) s += e.duration_s;
    return s / 3600.0;
  }

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& e : entries) {
      check(!e.clip_id.empty(), "manifest: empty clip id");
      check(seen.insert(e.clip_id).second, "manifest: duplicate clip id '" + e.clip_id + "'");
      check(e.duration_s > 0.0, "manifest: non-positive duration for '" + e.clip_id + "'");
    }
  }
};

inline std::size_t seconds_to_samples(double s) {
  return static_cast<std::size_t>(std::llround(s * kSampleRate));
}

inline double samples_to_seconds(std::size_t n) {
  return round_decimals(static_cast<double>(n) / kSampleRate, 6);
}

/// `clip_id<TAB>relative_path<TAB>duration_seconds<TAB>kind` per line; lines
/// starting with '#' are comments.
inline DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string(), ErrorCode::kIo);
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 4)
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields",
                  ErrorCode::kIo);
    m.entries.push_back({f[0], f[1], parse_double(f[2], "duration"), parse_kind(f[3])});
  }
  m.validate();
  return m;
}

inline void write_manifest(const fs::path& path, const DatasetManifest& m,
                           const std::string& header = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string(), ErrorCode::kIo);
  if (!header.empty()) out << "# " << header << "\n";
  for (const auto& e : m.entries)
    out << e.clip_id << '\t' << e.path.generic_string() << '\t' << format_fixed(e.duration_s, 6)
        << '\t' << to_string(e.kind) << '\n';
  if (!out) throw Error("write failed: " + path.string(), ErrorCode::kIo);
}

/// Clip loader keyed by clip id. Not thread-safe for loading; call
/// `preload` before sharing across workers.
class AudioStore {
 public:
  explicit AudioStore(const DatasetManifest& m) : manifest_(&m) {}

  const AudioBuffer& get(const std::string& id) {
    auto it = cache_.find(id);
    if (it != cache_.end()) return it->second;
    AudioBuffer a = read_wav(manifest_->resolve(manifest_->find(id)));
    accessed_.push_back(id);
    return cache_.emplace(id, std::move(a)).first->second;
  }

  const AudioBuffer& at(const std::string& id) const {
    auto it = cache_.find(id);
    check(it != cache_.end(), "audio store: clip '" + id + "' not loaded");
    return it->second;
  }

  void preload() {
    for (const auto& e : manifest_->entries) get(e.clip_id);
  }

  const DatasetManifest& manifest() const { return *manifest_; }
  const std::vector<std::string>& accessed() const { return accessed_; }

 private:
  const DatasetManifest* manifest_;
  std::map<std::string, AudioBuffer> cache_;
  std::vector<std::string> accessed_;
};

// ---------------------------------------------------------------------------
// Recipes
// ---------------------------------------------------------------------------

struct MixtureRecipe {
  std::string clean_id;
  std::string noise_id;
  double snr_db = 0.0;
  double noise_crop_start_s = 0.0;
  double noise_crop_len_s = 0.0;
  double mix_start_s = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const MixtureRecipe&) const = default;
};

constexpr double kSnrMinDb = -5.0;
constexpr double kSnrMaxDb = 20.0;

struct RecipeOptions {
  double snr_min_db = kSnrMinDb;
  double snr_max_db = kSnrMaxDb;
  std::optional<double> fixed_snr_db;
  /// Crop the longest possible noise segment instead of a random length.
  bool full_overlap = false;
};

/// Samples the noise geometry and SNR for a given clean clip.
inline MixtureRecipe sample_recipe_for(std::uint64_t seed, const ManifestEntry& speech,
                                       const DatasetManifest& noise,
                                       const RecipeOptions& opt = {}) {
  check(!noise.empty(), "sample_recipe: empty noise manifest");
  Rng rng(seed);
  const auto& n = noise.entries[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(noise.size()) - 1))];
  const auto ns = static_cast<std::int64_t>(seconds_to_samples(speech.duration_s));
  const auto nn = static_cast<std::int64_t>(seconds_to_samples(n.duration_s));
  const std::int64_t max_len = std::min(ns, nn);
  check(max_len >= 1, "sample_recipe: zero-length clip");
  const std::int64_t len = opt.full_overlap ? max_len : rng.uniform_int(1, max_len);
  const std::int64_t crop_start = rng.uniform_int(0, nn - len);
  const std::int64_t mix_start = rng.uniform_int(0, ns - len);
  const double u = std::clamp(round_decimals(rng.uniform(opt.snr_min_db, opt.snr_max_db), 6),
                              opt.snr_min_db, opt.snr_max_db);

  MixtureRecipe r;
  r.clean_id = speech.clip_id;
  r.noise_id = n.clip_id;
  r.snr_db = opt.fixed_snr_db ? *opt.fixed_snr_db : u;
  r.noise_crop_start_s = samples_to_seconds(static_cast<std::size_t>(crop_start));
  r.noise_crop_len_s = samples_to_seconds(static_cast<std::size_t>(len));
  r.mix_start_s = samples_to_seconds(static_cast<std::size_t>(mix_start));
  r.seed = seed;
  return r;
}

/// Chooses the clean clip and noise clip uniformly, then the geometry.
inline MixtureRecipe sample_recipe(std::uint64_t seed, const DatasetManifest& speech,
                                   const DatasetManifest& noise,
                                   const RecipeOptions& opt = {}) {
  check(!speech.empty(), "sample_recipe: empty speech manifest");
  check(!noise.empty(), "sample_recipe: empty noise manifest");
  Rng rng(derive_seed(seed, 0x5e));
  const auto& s = speech.entries[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(speech.size()) - 1))];
  return sample_recipe_for(seed, s, noise, opt);
}

struct MixGeometry {
  std::size_t crop_start, len, mix_start;
};

inline MixGeometry mix_geometry(std::size_t clean_len, std::size_t noise_len,
                                const MixtureRecipe& r) {
  check(r.noise_crop_start_s >= 0.0 && r.noise_crop_len_s > 0.0 && r.mix_start_s >= 0.0,
        "mix: negative recipe geometry");
  MixGeometry g{seconds_to_samples(r.noise_crop_start_s), seconds_to_samples(r.noise_crop_len_s),
                seconds_to_samples(r.mix_start_s)};
  check(g.len >= 1, "mix: empty noise crop");
  check(g.crop_start + g.len <= noise_len, "mix: noise crop exceeds noise clip '" + r.noise_id + "'");
  check(g.mix_start < clean_len, "mix: start beyond end of speech '" + r.clean_id + "'");
  g.len = std::min(g.len, clean_len - g.mix_start);  // shorten to fit
  return g;
}

/// Noise gain giving the requested overlap SNR (mean-square ratio).
inline double mix_gain(const AudioBuffer& clean, const AudioBuffer& noise, const MixtureRecipe& r) {
  const auto g = mix_geometry(clean.size(), noise.size(), r);
  double es = 0.0, en = 0.0;
  for (std::size_t i = 0; i < g.len; ++i) {
    es += clean.samples[g.mix_start + i] * clean.samples[g.mix_start + i];
    en += noise.samples[g.crop_start + i] * noise.samples[g.crop_start + i];
  }
  if (!(es > 0.0) || !(en > 0.0)) throw Error("degenerate energy for SNR scaling");
  return std::sqrt(es / (en * std::pow(10.0, r.snr_db / 10.0)));
}

/// clean + g * noise over the overlap, clean elsewhere. No renormalisation.
inline AudioBuffer mix(const AudioBuffer& clean, const AudioBuffer& noise, const MixtureRecipe& r) {
  check_finite(clean.samples, "mix");
  check_finite(noise.samples, "mix");
  const auto geo = mix_geometry(clean.size(), noise.size(), r);
  const double gain = mix_gain(clean, noise, r);
  AudioBuffer out = clean;
  for (std::size_t i = 0; i < geo.len; ++i)
    out.samples[geo.mix_start + i] += gain * noise.samples[geo.crop_start + i];
  return out;
}

/// 10*log10(sum clean^2 / sum (noisy - clean)^2) over the recipe's overlap.
inline double measured_overlap_snr(const AudioBuffer& clean, const AudioBuffer& noisy,
                                   const MixtureRecipe& r) {
  const auto g = mix_geometry(clean.size(), std::numeric_limits<std::size_t>::max() / 2, r);
  double es = 0.0, en = 0.0;
  for (std::size_t i = g.mix_start; i < g.mix_start + g.len; ++i) {
    const double d = noisy.samples[i] - clean.samples[i];
    es += clean.samples[i] * clean.samples[i];
    en += d * d;
  }
  return 10.0 * std::log10(es / en);
}

inline std::string format_recipe(const std::string& pair_id, const MixtureRecipe& r) {
  std::ostringstream os;
  os << pair_id << '\t' << r.clean_id << '\t' << r.noise_id << '\t' << format_fixed(r.snr_db, 6)
     << '\t' << format_fixed(r.noise_crop_start_s, 6) << '\t'
     << format_fixed(r.noise_crop_len_s, 6) << '\t' << format_fixed(r.mix_start_s, 6) << '\t'
     << r.seed;
  return os.str();
}

struct RecipeLine {
  std::string pair_id;
  MixtureRecipe recipe;
};

inline RecipeLine parse_recipe(const std::string& line) {
  const auto f = split(line, '\t');
  if (f.size() != 8) throw Error("recipe line: expected 8 fields: " + line, ErrorCode::kIo);
  RecipeLine out;
  out.pair_id = f[0];
  out.recipe.clean_id = f[1];
  out.recipe.noise_id = f[2];
  out.recipe.snr_db = parse_double(f[3], "snr_db");
  out.recipe.noise_crop_start_s = parse_double(f[4], "noise_crop_start_s");
  out.recipe.noise_crop_len_s = parse_double(f[5], "noise_crop_len_s");
  out.recipe.mix_start_s = parse_double(f[6], "mix_start_s");
  try {
    out.recipe.seed = std::stoull(f[7]);
  } catch (const std::exception&) {
    throw Error("recipe line: bad seed '" + f[7] + "'", ErrorCode::kIo);
  }
  return out;
}

inline std::vector<RecipeLine> read_recipes(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open recipes " + path.string(), ErrorCode::kIo);
  std::vector<RecipeLine> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    out.push_back(parse_recipe(line));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resource conditions
// ---------------------------------------------------------------------------

struct ResourceCondition {
  std::optional<double> speech_hours_limit;
  std::optional<double> noise_fraction;
};

/// Seeded shuffle, then greedy selection. Speech entries are taken until the
/// hour budget is reached (the last clip may overshoot); noise entries are
/// taken until ceil(noise_fraction * N). Unlimited kinds pass through.
inline DatasetManifest subset_manifest(const DatasetManifest& m, const ResourceCondition& cond,
                                       std::uint64_t seed) {
  m.validate();
  if (cond.noise_fraction)
    check(*cond.noise_fraction > 0.0 && *cond.noise_fraction <= 1.0,
          "subset: noise_fraction must be in (0, 1]");
  if (cond.speech_hours_limit) {
    check(*cond.speech_hours_limit >= 0.0, "subset: negative speech hours limit");
    const double avail = m.total_hours(ClipKind::kSpeech);
    if (*cond.speech_hours_limit > avail)
      throw Error("subset: speech limit " + format_fixed(*cond.speech_hours_limit, 6) +
                  " h exceeds available " + format_fixed(avail, 6) + " h");
  }

  std::vector<std::size_t> order(m.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::size_t n_noise = 0;
  for (const auto& e : m.entries) n_noise += e.kind == ClipKind::kNoise;
  const std::size_t noise_quota =
      cond.noise_fraction
          ? static_cast<std::size_t>(std::ceil(*cond.noise_fraction * static_cast<double>(n_noise) - 1e-9))
          : n_noise;

  DatasetManifest out;
  out.base_dir = m.base_dir;
  double speech_s = 0.0;
  std::size_t noise_taken = 0;
  const double limit_s = cond.speech_hours_limit ? *cond.speech_hours_limit * 3600.0 : 0.0;
  for (std::size_t i : order) {
    const auto& e = m.entries[i];
    if (e.kind == ClipKind::kSpeech) {
      if (cond.speech_hours_limit && speech_s >= limit_s) continue;
      speech_s += e.duration_s;
      out.entries.push_back(e);
    } else {
      if (noise_taken >= noise_quota) continue;
      ++noise_taken;
      out.entries.push_back(e);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paired corpus simulation
// ---------------------------------------------------------------------------

struct PairedEntry {
  std::string pair_id;
  fs::path noisy_path;
  fs::path clean_path;
  double duration_s = 0.0;
};

struct PairedManifest {
  std::vector<PairedEntry> entries;
  fs::path base_dir;

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }
  std::size_t size() const { return entries.size(); }
};

/// `pair_id<TAB>noisy_path<TAB>clean_path<TAB>duration_seconds` per line.
inline void write_paired_manifest(const fs::path& path, const PairedManifest& m,
                                  const std::string& header = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string(), ErrorCode::kIo);
  if (!header.empty()) out << "# " << header << "\n";
  for (const auto& e : m.entries)
    out << e.pair_id << '\t' << e.noisy_path.generic_string() << '\t'
        << e.clean_path.generic_string() << '\t' << format_fixed(e.duration_s, 6) << '\n';
  if (!out) throw Error("write failed: " + path.string(), ErrorCode::kIo);
}

inline PairedManifest read_paired_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open paired manifest " + path.string(), ErrorCode::kIo);
  PairedManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, '\t');
    if (f.size() != 4) throw Error(path.string() + ": expected 4 fields: " + line, ErrorCode::kIo);
    m.entries.push_back({f[0], f[1], f[2], parse_double(f[3], "duration")});
  }
  return m;
}

struct SimulateOptions {
  RecipeOptions recipe;
  int workers = 1;
  std::string header;  // written as a comment line into every text artifact
};

struct SimulatedPair {
  AudioBuffer noisy;
  AudioBuffer clean;
};

inline SimulatedPair regenerate_pair(const MixtureRecipe& r, AudioStore& speech, AudioStore& noise) {
  const AudioBuffer& clean = speech.get(r.clean_id);
  const AudioBuffer& nz = noise.get(r.noise_id);
  return {mix(clean, nz, r), clean};
}

/// Runs fn(i) for i in [0, n) over `workers` threads; each index is handled
/// by exactly one worker so results never depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const std::size_t w = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t k = 0; k < w; ++k)
    threads.emplace_back([&, k] {
      try {
        for (std::size_t i = k; i < n; i += w) fn(i);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Writes noisy_k.wav / clean_k.wav, recipes.tsv and pairs.tsv into out_dir.
/// Pair k uses seed derive_seed(seed, k), so output does not depend on the
/// number of workers.
inline PairedManifest simulate_corpus(const DatasetManifest& speech, const DatasetManifest& noise,
                                      std::size_t count, std::uint64_t seed, const fs::path& out_dir,
                                      const SimulateOptions& opt = {}) {
  speech.validate();
  noise.validate();
  check(!speech.empty() && !noise.empty(), "simulate: empty manifest");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message(), ErrorCode::kIo);

  AudioStore sstore(speech), nstore(noise);
  sstore.preload();
  nstore.preload();

  std::vector<MixtureRecipe> recipes(count);
  for (std::size_t k = 0; k < count; ++k)
    recipes[k] = sample_recipe(derive_seed(seed, k), speech, noise, opt.recipe);

  PairedManifest pm;
  pm.base_dir = out_dir;
  pm.entries.resize(count);
  parallel_for(count, opt.workers, [&](std::size_t k) {
    const auto& r = recipes[k];
    const AudioBuffer& clean = sstore.at(r.clean_id);
    const AudioBuffer noisy = mix(clean, nstore.at(r.noise_id), r);
    const std::string id = std::to_string(k);
    const std::string nname = "noisy_" + id + ".wav", cname = "clean_" + id + ".wav";
    write_wav(out_dir / nname, noisy);
    write_wav(out_dir / cname, clean);
    pm.entries[k] = {id, nname, cname, samples_to_seconds(clean.size())};
  });

  {
    std::ofstream rf(out_dir / "recipes.tsv");
    if (!rf) throw Error("cannot write " + (out_dir / "recipes.tsv").string(), ErrorCode::kIo);
    if (!opt.header.empty()) rf << "# " << opt.header << "\n";
    for (std::size_t k = 0; k < count; ++k) rf << format_recipe(std::to_string(k), recipes[k]) << '\n';
  }
  write_paired_manifest(out_dir / "pairs.tsv", pm, opt.header);
  return pm;
}

}  // namespace sslse
