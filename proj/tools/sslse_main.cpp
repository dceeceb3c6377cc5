// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// sslse command-line driver.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <unistd.h>
#include <vector>

#include "sslse/sslse.hpp"

namespace fs = std::filesystem;
using namespace sslse;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::int64_t> seed;
  std::string out;
  std::string precision;
  std::optional<int> workers;
  std::vector<std::string> overrides;  // key=value
};

Config resolve_config(const GlobalOptions& g, const std::string& preset = {}) {
  Config c;
  if (!preset.empty()) c.merge_text(preset, "<preset>");
  if (!g.config_path.empty()) c.merge_file(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw Error("--set expects key=value, got '" + kv + "'", ErrorCode::kConfig);
    c.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (g.seed) c.set("seed", std::to_string(*g.seed));
  if (!g.precision.empty()) c.set("precision", g.precision);
  if (g.workers) c.set("workers", std::to_string(*g.workers));
  const auto& p = c.str("precision");
  if (p != "f32" && p != "f64")
    throw Error("precision must be f32 or f64, got '" + p + "'", ErrorCode::kConfig);
  return c;
}

std::string artifact_header(const Config& c) {
  return "config_hash=" + c.hash_hex() + " dsp_hash=" + dsp_hash(c);
}

/// Output directory owned by this process for the lifetime of the object.
class RunDir {
 public:
  RunDir(const GlobalOptions& g, const std::string& command, const Config& cfg) {
    if (!g.out.empty()) {
      path_ = g.out;
    } else {
      const char* root = std::getenv("SSLSE_RUN_ROOT");
      path_ = fs::path(root != nullptr && *root ? root : "runs") / (command + "-" + cfg.hash_hex());
    }
    std::error_code ec;
    fs::create_directories(path_, ec);
    if (ec) throw Error("cannot create run directory " + path_.string() + ": " + ec.message(), ErrorCode::kIo);
    lock_ = path_ / "run.lock";
    FILE* f = std::fopen(lock_.c_str(), "wx");
    if (f == nullptr)
      throw Error("run directory is locked by another process: " + path_.string(), ErrorCode::kIo);
    std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
    std::fclose(f);
    cfg.write(path_ / "config.txt");
  }
  ~RunDir() {
    std::error_code ec;
    fs::remove(lock_, ec);
  }
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_, lock_;
};

void require_file(const std::string& p, const char* what) {
  if (p.empty()) throw Error(std::string("missing required input: ") + what, ErrorCode::kInvalidArgument);
  if (!fs::exists(p)) throw Error(std::string(what) + " not found: " + p, ErrorCode::kIo);
}

template <class Fn>
void with_precision(const Config& c, Fn&& fn) {
  if (c.str("precision") == "f64") fn.template operator()<double>();
  else fn.template operator()<float>();
}

SynthOptions synth_options(const Config& c) {
  return {c.count("synth.speech_clips"), c.count("synth.noise_clips"), c.num("synth.speech_seconds"),
          c.num("synth.noise_seconds")};
}

RecipeOptions recipe_options(const Config& c) {
  RecipeOptions r;
  r.snr_min_db = c.num("simulate.snr_min");
  r.snr_max_db = c.num("simulate.snr_max");
  r.fixed_snr_db = c.optional_num("simulate.fixed_snr");
  r.full_overlap = c.flag("simulate.full_overlap");
  check(r.snr_min_db <= r.snr_max_db, "simulate SNR bounds are reversed", ErrorCode::kConfig);
  return r;
}

ResourceCondition condition(const Config& c) {
  return {c.optional_num("condition.speech_hours"), c.optional_num("condition.noise_fraction")};
}

std::uint64_t seed_of(const Config& c) { return static_cast<std::uint64_t>(c.integer("seed")); }

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string(), ErrorCode::kIo);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string(), ErrorCode::kIo);
  out << text;
}

/// Configuration a model run directory was trained with.
Config model_config(const fs::path& model_dir) {
  Config c;
  c.merge_file(model_dir / "config.txt");
  return c;
}

template <class T>
MaskFn model_mask_fn(EnhancementModel<T>& m) {
  return [&m](const AudioBuffer& noisy, const MagnitudeSpectrogram& mag) { return m.predict_mask(noisy, mag); };
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_synth(const GlobalOptions& g) {
  const Config c = resolve_config(g);
  RunDir run(g, "synth", c);
  const auto corpus = write_synthetic_corpus(run.path(), synth_options(c), seed_of(c), artifact_header(c));
  std::printf("wrote %zu speech and %zu noise clips to %s\n", corpus.speech.size(), corpus.noise.size(),
              run.path().c_str());
}

void cmd_simulate(const GlobalOptions& g, const std::string& speech, const std::string& noise) {
  const Config c = resolve_config(g);
  require_file(speech, "speech manifest");
  require_file(noise, "noise manifest");
  RunDir run(g, "simulate", c);
  const auto cond = condition(c);
  const auto nm = subset_manifest(read_manifest(noise), {std::nullopt, cond.noise_fraction}, seed_of(c));
  const auto pm = simulate_corpus(read_manifest(speech), nm, c.count("simulate.pairs"), seed_of(c), run.path(),
                                  {recipe_options(c), static_cast<int>(c.count("workers")), artifact_header(c)});
  std::printf("wrote %zu pairs to %s\n", pm.size(), (run.path() / "pairs.tsv").c_str());
}

void cmd_subset(const GlobalOptions& g, const std::string& manifest) {
  const Config c = resolve_config(g);
  require_file(manifest, "manifest");
  RunDir run(g, "subset", c);
  const auto m = read_manifest(manifest);
  auto out = subset_manifest(m, condition(c), seed_of(c));
  // Paths stay valid relative to the new manifest location.
  for (auto& e : out.entries) e.path = fs::absolute(m.resolve(e));
  write_manifest(run.path() / "manifest.tsv", out, artifact_header(c));
  std::printf("kept %zu of %zu clips (%.6f speech hours)\n", out.size(), m.size(),
              out.total_hours(ClipKind::kSpeech));
}

void cmd_quantize(const GlobalOptions& g, const std::string& speech) {
  const Config c = resolve_config(g);
  require_file(speech, "speech manifest");
  RunDir run(g, "quantize-targets", c);
  const auto cfg = pretrain_config(c);
  const auto cb = quantize_targets(read_manifest(speech), cfg);
  Checkpoint ck;
  add_codebook(ck, cb);
  ck.save(run.path() / "codebook.ckpt");
  std::printf("codebook with %zu classes written to %s\n", cb.C, (run.path() / "codebook.ckpt").c_str());
}

void cmd_pretrain(const GlobalOptions& g, const std::string& speech, const std::string& noise,
                  const std::string& codebook) {
  Config c = resolve_config(g);
  require_file(speech, "speech manifest");
  const auto cfg = pretrain_config(c);
  if (cfg.noise_mixing) require_file(noise, "noise manifest");
  RunDir run(g, "pretrain", c);
  std::optional<QuantizerCodebook> cb;
  if (!codebook.empty()) {
    require_file(codebook, "codebook");
    cb = read_codebook(Checkpoint::load(codebook));
  }
  const auto sm = subset_manifest(read_manifest(speech), {condition(c).speech_hours_limit, std::nullopt},
                                  seed_of(c));
  const DatasetManifest nm = noise.empty() ? DatasetManifest{} : read_manifest(noise);
  with_precision(c, [&]<class T>() {
    const auto r = pretrain<T>(cfg, sm, nm, run.path(), cb);
    std::printf("pretrain: %zu steps, final loss %.6g, mixer calls %zu\n", r.losses.size(), r.losses.back(),
                r.mixer_calls);
  });
}

void cmd_finetune(const GlobalOptions& g, const std::string& pairs) {
  const Config c = resolve_config(g);
  require_file(pairs, "paired manifest");
  const auto cfg = finetune_config(c);
  if (cfg.backbone_checkpoint) require_file(cfg.backbone_checkpoint->string(), "backbone checkpoint");
  RunDir run(g, "finetune", c);
  with_precision(c, [&]<class T>() {
    const auto r = finetune<T>(cfg, read_paired_manifest(pairs), run.path());
    std::printf("finetune: %zu steps, final loss %.6g, %zu pairs read\n", r.losses.size(), r.losses.back(),
                r.accessed.size());
  });
}

void cmd_enhance(const GlobalOptions& g, const std::string& model_dir, const std::string& input,
                 const std::string& output, const std::string& mode_name, const std::string& clean_path) {
  const Config c = resolve_config(g);
  require_file(input, "input audio");
  const auto mode = parse_enhance_mode(mode_name);
  RunDir run(g, "enhance", c);
  const auto noisy = read_wav(input);
  std::optional<AudioBuffer> clean;
  if (!clean_path.empty()) {
    require_file(clean_path, "clean reference");
    clean = read_wav(clean_path);
  }
  const fs::path out = output.empty() ? run.path() / "enhanced.wav" : fs::path(output);
  if (mode != EnhanceMode::kModel) {
    write_wav(out, enhance_utterance(noisy, mode, stft_config(c), {}, clean ? &*clean : nullptr));
  } else {
    require_file(model_dir, "model run directory");
    const Config mc = model_config(model_dir);
    if (dsp_hash(mc) != dsp_hash(c))
      throw Error("model DSP configuration differs from the requested one", ErrorCode::kConfig);
    with_precision(c, [&]<class T>() {
      auto m = load_enhancement_model<T>(finetune_config(mc), fs::path(model_dir) / "model.ckpt");
      write_wav(out, enhance_utterance(noisy, mode, stft_config(mc), model_mask_fn(m)));
    });
  }
  std::printf("wrote %s\n", out.c_str());
}

EvalReport run_evaluation(const Config& c, const PairedManifest& pm, EnhanceMode mode, const std::string& model_dir) {
  EvalOptions opt;
  opt.mode = mode;
  opt.stft = stft_config(c);
  opt.exponent = c.num("finetune.exponent");
  opt.workers = static_cast<int>(c.count("workers"));
  EvalReport rep;
  if (mode == EnhanceMode::kModel) {
    require_file(model_dir, "model run directory");
    const Config mc = model_config(model_dir);
    if (dsp_hash(mc) != dsp_hash(c))
      throw Error("model DSP configuration differs from the requested one", ErrorCode::kConfig);
    with_precision(c, [&]<class T>() {
      auto m = load_enhancement_model<T>(finetune_config(mc), fs::path(model_dir) / "model.ckpt");
      rep = evaluate(pm, opt, model_mask_fn(m));
    });
  } else {
    rep = evaluate(pm, opt);
  }
  rep.config_hash = c.hash_hex();
  rep.dsp_hash = dsp_hash(c);
  return rep;
}

void cmd_evaluate(const GlobalOptions& g, const std::string& pairs, const std::string& model_dir,
                  const std::string& mode_name, const std::string& compare) {
  const Config c = resolve_config(g);
  require_file(pairs, "paired manifest");
  RunDir run(g, "evaluate", c);
  const auto rep = run_evaluation(c, read_paired_manifest(pairs), parse_enhance_mode(mode_name), model_dir);
  write_text(run.path() / "report.tsv", format_report(rep));
  std::printf("mean SDR: noisy %.4f dB, enhanced %.4f dB, oracle %.4f dB\n", rep.mean(&EvalRow::sdr_noisy),
              rep.mean(&EvalRow::sdr_enhanced), rep.mean(&EvalRow::sdr_oracle));
  if (!compare.empty()) {
    require_file(compare, "report to compare");
    const auto d = compare_reports(parse_report(read_text(compare)), rep);
    double mean = 0.0;
    for (double x : d) mean += x;
    std::printf("mean enhanced-SDR change vs %s: %+.4f dB\n", compare.c_str(), mean / static_cast<double>(d.size()));
  }
}

int cmd_gradcheck(const GlobalOptions& g, std::size_t instances) {
  const Config c = resolve_config(g);
  double worst = 0.0;
  for (const auto& r : all_gradchecks(instances, seed_of(c))) {
    std::printf("%-44s %.3e  (%zu coords)\n", r.name.c_str(), r.max_rel_error, r.coords_checked);
    worst = std::max(worst, r.max_rel_error);
  }
  std::printf("max relative error %.3e\n", worst);
  if (worst >= 1e-4) {
    std::fprintf(stderr, "sslse: error: code=non_finite: gradient check failed (max relative error %.3e)\n", worst);
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// reproduce-condition
// ---------------------------------------------------------------------------

// Desk-scale settings shared by every condition; user configuration and
// --set overrides are applied on top.
constexpr const char* kDeskPreset = R"(
synth.speech_clips = 16
synth.noise_clips = 8
synth.speech_seconds = 1.0
synth.noise_seconds = 3.0
simulate.pairs = 64
pretrain.steps = 200
finetune.steps = 200
head.hidden = 32
)";

std::string condition_preset(const std::string& name) {
  // 64 one-second training pairs; limits are in hours.
  if (name == "low-speech") return "condition.speech_hours = 0.004444444\n";  // 16 s
  if (name == "low-noise") return "condition.noise_fraction = 0.25\n";
  if (name == "high") return "";
  if (name == "low-pretrain") return "condition.speech_hours = 0.004444444\n";
  throw Error("unknown condition '" + name + "' (expected low-speech, low-noise, high or low-pretrain)",
              ErrorCode::kInvalidArgument);
}

struct SystemSpec {
  const char* name;
  const char* objective;  // nullptr: no pre-training
  bool mixing;
};

constexpr SystemSpec kSystems[] = {
    {"baseline", nullptr, false},
    {"ssl", "classification", false},
    {"ssl+regression", "regression", false},
    {"ssl+mixing", "classification", true},
    {"ssl+regression+mixing", "regression", true},
};

std::string metric(double v) { return format_metric(v); }

int cmd_reproduce(const GlobalOptions& g, const std::string& name) {
  const Config base = resolve_config(g, std::string(kDeskPreset) + condition_preset(name));
  RunDir run(g, "reproduce-" + name, base);
  const fs::path root = run.path();
  const std::uint64_t seed = seed_of(base);
  const std::string header = artifact_header(base);
  const auto cond = condition(base);

  // Data: training corpus, held-out corpus for testing.
  const auto corpus = write_synthetic_corpus(root / "corpus", synth_options(base), derive_seed(seed, 1), header);
  SynthOptions held = synth_options(base);
  held.speech_clips = std::max<std::size_t>(4, held.speech_clips / 2);
  const auto test_corpus = write_synthetic_corpus(root / "heldout", held, derive_seed(seed, 2), header);
  const auto noise = subset_manifest(corpus.noise, {std::nullopt, cond.noise_fraction}, derive_seed(seed, 3));
  const SimulateOptions sim{recipe_options(base), static_cast<int>(base.count("workers")), header};
  const auto train_pairs = simulate_corpus(corpus.speech, noise, base.count("simulate.pairs"),
                                           derive_seed(seed, 4), root / "train_pairs", sim);
  const auto test_pairs = simulate_corpus(test_corpus.speech, test_corpus.noise, 20, derive_seed(seed, 5),
                                          root / "test_pairs", sim);
  // Low pre-training resource also limits the pre-training speech.
  const auto pre_speech = name == "low-pretrain"
                              ? subset_manifest(corpus.speech, {cond.speech_hours_limit, std::nullopt}, derive_seed(seed, 6))
                              : corpus.speech;

  std::string table = "system\tsdr_noisy\tsdr_enhanced\tsdr_oracle\trestoration_loss\n";
  std::map<std::string, double> sdr_by_system;
  std::printf("%-24s %10s %12s %10s\n", "system", "noisy", "enhanced", "oracle");
  for (const auto& sys : kSystems) {
    Config c = base;
    std::string dir_name = sys.name;
    for (auto& ch : dir_name)
      if (ch == '+') ch = '_';
    if (sys.objective != nullptr) {
      c.set("pretrain.objective", sys.objective);
      c.set("pretrain.noise_mixing", sys.mixing ? "true" : "false");
      const fs::path pdir = root / ("pretrain_" + dir_name);
      fs::create_directories(pdir);
      c.write(pdir / "config.txt");
      with_precision(c, [&]<class T>() { pretrain<T>(pretrain_config(c), pre_speech, noise, pdir); });
      c.set("finetune.backbone", (pdir / "model.ckpt").string());
    }
    const fs::path fdir = root / ("finetune_" + dir_name);
    fs::create_directories(fdir);
    c.write(fdir / "config.txt");
    with_precision(c, [&]<class T>() { finetune<T>(finetune_config(c), train_pairs, fdir); });
    auto rep = run_evaluation(c, test_pairs, EnhanceMode::kModel, fdir.string());
    write_text(fdir / "report.tsv", format_report(rep));
    sdr_by_system[sys.name] = rep.mean(&EvalRow::sdr_enhanced);
    table += std::string(sys.name) + "\t" + metric(rep.mean(&EvalRow::sdr_noisy)) + "\t" +
             metric(rep.mean(&EvalRow::sdr_enhanced)) + "\t" + metric(rep.mean(&EvalRow::sdr_oracle)) + "\t" +
             metric(rep.mean(&EvalRow::restoration_loss)) + "\n";
    std::printf("%-24s %10.4f %12.4f %10.4f\n", sys.name, rep.mean(&EvalRow::sdr_noisy),
                rep.mean(&EvalRow::sdr_enhanced), rep.mean(&EvalRow::sdr_oracle));
  }
  double best_ssl = -1e300;
  for (const auto& sys : kSystems)
    if (sys.objective != nullptr) best_ssl = std::max(best_ssl, sdr_by_system[sys.name]);
  const bool ssl_ok = best_ssl >= sdr_by_system["baseline"];
  table += "#CHECK\tssl_vs_baseline=" + std::string(ssl_ok ? "ok" : "below") + "\n";
  if (!ssl_ok)
    table += "#NOTE\tno pre-trained system reached the baseline's mean SDR; at desk scale the backbone sees " +
             std::to_string(pre_speech.size()) + " short clips for " + base.str("pretrain.steps") +
             " steps, so its features carry little beyond the noisy magnitude\n";
  table += "#META\tcondition=" + name + "\tconfig_hash=" + base.hash_hex() + "\tdsp_hash=" + dsp_hash(base) + "\n";
  write_text(root / "comparison.tsv", table);
  std::printf("comparison written to %s\n", (root / "comparison.tsv").c_str());
  return 0;
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised speech features for speech enhancement"};
  app.require_subcommand(1);
  GlobalOptions g;
  auto add_globals = [&](CLI::App* sub) {
    sub->add_option("--config", g.config_path, "configuration file (key = value)");
    sub->add_option("--seed", g.seed, "master seed; overrides the configuration");
    sub->add_option("--out", g.out, "run directory (default: $SSLSE_RUN_ROOT/<command>-<config hash>)");
    sub->add_option("--precision", g.precision, "f32 or f64");
    sub->add_option("--workers", g.workers, "worker threads");
    sub->add_option("--set", g.overrides, "configuration override key=value (repeatable)");
  };

  auto* synth = app.add_subcommand("synth", "write a synthetic speech/noise corpus");
  add_globals(synth);

  std::string speech, noise, pairs, manifest, codebook, model_dir, input, output, mode = "model", clean, compare;
  auto* simulate = app.add_subcommand("simulate", "mix speech and noise into noisy/clean pairs");
  add_globals(simulate);
  simulate->add_option("--speech", speech, "speech manifest")->required();
  simulate->add_option("--noise", noise, "noise manifest")->required();

  auto* subset = app.add_subcommand("subset", "apply the resource condition to a manifest");
  add_globals(subset);
  subset->add_option("--manifest", manifest, "manifest to subset")->required();

  auto* quant = app.add_subcommand("quantize-targets", "k-means codebook over clean fbank frames");
  add_globals(quant);
  quant->add_option("--speech", speech, "speech manifest")->required();

  auto* pre = app.add_subcommand("pretrain", "masked-prediction pre-training");
  add_globals(pre);
  pre->add_option("--speech", speech, "speech manifest")->required();
  pre->add_option("--noise", noise, "noise manifest (needed for noise mixing)");
  pre->add_option("--codebook", codebook, "codebook checkpoint from quantize-targets");

  auto* fine = app.add_subcommand("finetune", "train the enhancement head");
  add_globals(fine);
  fine->add_option("--pairs", pairs, "paired manifest")->required();

  auto* enh = app.add_subcommand("enhance", "enhance one noisy file");
  add_globals(enh);
  enh->add_option("--model", model_dir, "fine-tuning run directory");
  enh->add_option("--input", input, "noisy wav")->required();
  enh->add_option("--output", output, "output wav");
  enh->add_option("--mode", mode, "model, oracle or identity");
  enh->add_option("--clean", clean, "clean reference (oracle mode)");

  auto* eval = app.add_subcommand("evaluate", "score a paired manifest");
  add_globals(eval);
  eval->add_option("--pairs", pairs, "paired manifest")->required();
  eval->add_option("--model", model_dir, "fine-tuning run directory");
  eval->add_option("--mode", mode, "model, oracle or identity");
  eval->add_option("--compare", compare, "earlier report to compare against");

  std::size_t instances = 20;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and composite");
  add_globals(grad);
  grad->add_option("--instances", instances, "random instances per op");

  std::string cond_name;
  auto* repro = app.add_subcommand("reproduce-condition", "desk-scale comparison for one resource condition");
  add_globals(repro);
  repro->add_option("condition", cond_name, "low-speech, low-noise, high or low-pretrain")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "sslse: error: code=usage: %s\n", one_line(e.what()).c_str());
    return 2;
  }

  try {
    if (synth->parsed()) cmd_synth(g);
    else if (simulate->parsed()) cmd_simulate(g, speech, noise);
    else if (subset->parsed()) cmd_subset(g, manifest);
    else if (quant->parsed()) cmd_quantize(g, speech);
    else if (pre->parsed()) cmd_pretrain(g, speech, noise, codebook);
    else if (fine->parsed()) cmd_finetune(g, pairs);
    else if (enh->parsed()) cmd_enhance(g, model_dir, input, output, mode, clean);
    else if (eval->parsed()) cmd_evaluate(g, pairs, model_dir, mode, compare);
    else if (grad->parsed()) return cmd_gradcheck(g, instances);
    else if (repro->parsed()) return cmd_reproduce(g, cond_name);
  } catch (const Error& e) {
    std::fprintf(stderr, "sslse: error: code=%s: %s\n", error_code_name(e.code()), one_line(e.what()).c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sslse: error: code=generic: %s\n", one_line(e.what()).c_str());
    return 1;
  }
  return 0;
}
