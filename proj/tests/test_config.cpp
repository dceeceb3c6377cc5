// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "sslse/config.hpp"

using namespace sslse;

TEST_CASE("every key has a default and a description", "[config]") {
  std::set<std::string> seen;
  for (const auto& k : config_keys()) {
    REQUIRE(seen.insert(k.name).second);
    REQUIRE(std::string(k.doc).size() > 0);
  }
  Config c;
  REQUIRE(c.str("pretrain.objective") == "regression");
  REQUIRE(c.num("mask.p") == 0.065);
  REQUIRE(c.count("mask.span") == 10);
  REQUIRE_FALSE(c.optional_num("condition.speech_hours").has_value());
}

TEST_CASE("unknown keys are rejected by name", "[config]") {
  Config c;
  try {
    c.merge_text("pretrain.steps = 10\npretrain.stpes = 20\n");
    FAIL("expected an error");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::kConfig);
    REQUIRE(std::string(e.what()).find("pretrain.stpes") != std::string::npos);
  }
}

TEST_CASE("comments, blank lines and malformed lines", "[config]") {
  Config c;
  c.merge_text("# header\n\n  seed = 7   # trailing\nhead.hidden=32\n");
  REQUIRE(c.integer("seed") == 7);
  REQUIRE(c.count("head.hidden") == 32);
  try {
    c.merge_text("seed = 1\nnot a pair\n", "run.cfg");
    FAIL("expected an error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("run.cfg:2") != std::string::npos);
  }
}

TEST_CASE("typed accessors report bad values", "[config]") {
  Config c;
  c.set("pretrain.noise_mixing", "maybe");
  REQUIRE_THROWS_AS(c.flag("pretrain.noise_mixing"), Error);
  c.set("pretrain.steps", "-3");
  REQUIRE_THROWS_AS(c.count("pretrain.steps"), Error);
  c.set("pretrain.lr", "fast");
  REQUIRE_THROWS_AS(c.num("pretrain.lr"), Error);
}

TEST_CASE("serialisation is sorted, stable and hashed", "[config]") {
  Config a, b;
  a.set("seed", "3");
  a.set("head.hidden", "32");
  b.set("head.hidden", "32");
  b.set("seed", "3");
  REQUIRE(a.serialize() == b.serialize());
  REQUIRE(a.hash_hex() == b.hash_hex());
  b.set("seed", "4");
  REQUIRE(a.hash_hex() != b.hash_hex());

  const auto text = a.serialize();
  std::string prev;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    REQUIRE(line > prev);
    prev = line;
  }
}

TEST_CASE("written config reloads to the same hash", "[config]") {
  const auto dir = std::filesystem::temp_directory_path() / "sslse_test_config";
  std::filesystem::create_directories(dir);
  Config a;
  a.set("finetune.steps", "17");
  a.write(dir / "config.txt");
  Config b;
  b.merge_file(dir / "config.txt");
  REQUIRE(b.hash_hex() == a.hash_hex());
  REQUIRE_THROWS_AS(b.merge_file(dir / "missing.txt"), Error);
}

TEST_CASE("reference text parses back to the defaults", "[config]") {
  Config a, b;
  b.merge_text(config_reference());
  REQUIRE(a.serialize() == b.serialize());
}

TEST_CASE("derived DSP and backbone settings", "[config]") {
  Config c;
  const auto s = stft_config(c);
  REQUIRE(s.window_len == 400);
  REQUIRE(s.hop == 160);
  REQUIRE(s.fft_size == 512);
  const auto b = backbone_config(c);
  REQUIRE(b.cnn_layers.size() == 2);
  REQUIRE(b.total_stride() == 320);
  REQUIRE(duplication_factor(b, s) == 2);

  Config d = c;
  d.set("backbone.heads", "8");
  REQUIRE(dsp_hash(c) == dsp_hash(d));
  d.set("dsp.hop", "128");
  REQUIRE(dsp_hash(c) != dsp_hash(d));
  REQUIRE_THROWS_AS(duplication_factor(b, stft_config(d)), Error);

  c.set("backbone.cnn", "32/16");
  REQUIRE_THROWS_AS(backbone_config(c), Error);
  c.set("dsp.fft", "500");
  REQUIRE_THROWS_AS(stft_config(c), Error);
}
