#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sdd/config.hpp"
#include "sdd/pipeline.hpp"

using namespace sdd;
namespace fs = std::filesystem;

TEST_CASE("config parsing") {
  SUBCASE("defaults and overrides") {
    auto cfg = cli::make_preset("toy");
    CHECK(cfg.model.d_model == 64);
    CHECK(cfg.dsp.target_frames == 256);
    cli::apply_config_text(cfg, "model.d_model = 32\n# comment\n\ntrain.lr = 0.01\n");
    cli::finalize(cfg);
    CHECK(cfg.model.d_model == 32);
    CHECK(cfg.train.lr == doctest::Approx(0.01));
  }
  SUBCASE("unknown keys are rejected") {
    auto cfg = cli::make_preset("toy");
    CHECK_THROWS_AS(cli::apply_config_text(cfg, "model.width = 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(cli::apply_config_text(cfg, "nonsense\n"), std::invalid_argument);
  }
  SUBCASE("paper-scale preset") {
    const auto cfg = cli::make_preset("paper-scale");
    CHECK(cfg.dsp.target_frames == 1024);
    CHECK(cfg.model.sentence_layers == 12);
    CHECK(cfg.model.speech_layers == 6);
    CHECK(cfg.model.max_sentences == 42);
    CHECK(cfg.train.grad_accum == 72);
    CHECK(cfg.train.lr == doctest::Approx(3e-5));
    CHECK(cfg.perturb_sentence_step == 10);
    CHECK_THROWS_AS(cli::make_preset("huge"), std::invalid_argument);
  }
  SUBCASE("finalize syncs derived fields") {
    auto cfg = cli::make_preset("toy");
    cli::apply_config_text(cfg, "dsp.target_frames = 128\ndsp.log_floor = 1e-8\n");
    cli::finalize(cfg);
    CHECK(cfg.model.target_frames == 128);
    CHECK(cfg.model.pad_value == doctest::Approx(std::log(1e-8)));
    CHECK(cfg.synth.sample_rate == cfg.dsp.sample_rate);
  }
  SUBCASE("serialization round-trips and hashes are stable") {
    auto cfg = cli::make_preset("toy");
    cfg.seed = 99;
    const auto text = cli::serialize(cfg);
    auto cfg2 = cli::make_preset("toy");
    cli::apply_config_text(cfg2, text);
    cli::finalize(cfg2);
    CHECK(cli::serialize(cfg2) == text);
    CHECK(cli::config_hash_hex(cfg) == cli::config_hash_hex(cfg2));
    cfg2.train.lr = 123.0;
    CHECK(cli::config_hash_hex(cfg) != cli::config_hash_hex(cfg2));
  }
}

TEST_CASE("synth stage writes a corpus with relative paths") {
  auto cfg = cli::make_preset("toy");
  cfg.synth.n_speakers = 12;
  cfg.synth.sentences_per_speaker = 2;
  cfg.synth.duration_min_s = 0.8;
  cfg.synth.duration_max_s = 1.0;
  cfg.seed = 5;
  cli::finalize(cfg);

  const auto out = (fs::temp_directory_path() / "sdd_stage_synth").string();
  fs::remove_all(out);
  cli::stage_synth(cfg, out);
  CHECK(fs::exists(fs::path(out) / "corpus" / "manifest.jsonl"));
  const auto manifest = synth::read_manifest((fs::path(out) / "corpus" / "manifest.jsonl").string());
  CHECK(manifest.speakers.size() == 12);
  for (const auto& s : manifest.speakers) {
    for (const auto& sent : s.sentences) {
      CHECK(sent.path.starts_with("wav/"));
      CHECK(fs::exists(fs::path(out) / "corpus" / sent.path));
    }
  }
  fs::remove_all(out);
}

TEST_CASE("significance report flags planted directions") {
  auto cfg = cli::make_preset("toy");
  std::vector<acoustics::AcousticFeatureRow> rows;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (int i = 0; i < 60; ++i) {
    acoustics::AcousticFeatureRow r;
    r.speaker_id = "s" + std::to_string(i);
    r.covariate = i % 2;
    const bool tp = i < 30;
    r.outcome = tp ? acoustics::Outcome::TP : acoustics::Outcome::TN;
    r.loudness_db = (tp ? -29.0 : -23.0) + noise(rng) + (r.covariate ? 0.5 : 0.0);
    r.f0_hz = (tp ? 120.0 : 150.0) + 5.0 * noise(rng) + (r.covariate ? 60.0 : 0.0);
    r.voiced_fraction = 1.0;
    r.spectral_centroid_hz = 500.0 + 20.0 * noise(rng);
    r.zcr = 600.0 + 30.0 * noise(rng);
    r.total_span_ms = 400.0;
    rows.push_back(r);
  }
  const auto report = cli::significance_report(cfg, rows);
  CHECK(report.at("m").get<int>() == 4);
  const auto& loud = report.at("features").at("loudness_db");
  CHECK(loud.at("direction").get<std::string>() == "lower");
  CHECK(loud.at("p").get<double>() < 0.05 / 4);
  const auto& f0 = report.at("features").at("f0_hz");
  CHECK(f0.at("direction").get<std::string>() == "lower");
  CHECK(f0.at("p").get<double>() < 0.05 / 4);
  // centroid and zcr carry no planted direction; tiers exist either way
  CHECK(report.at("features").at("spectral_centroid_hz").contains("tier"));
}

TEST_CASE("feature csv round trip") {
  std::vector<acoustics::AcousticFeatureRow> rows(2);
  rows[0].speaker_id = "spk0001";
  rows[0].outcome = acoustics::Outcome::TP;
  rows[0].covariate = 1;
  rows[0].loudness_db = -25.5;
  rows[0].f0_hz = 123.25;
  rows[0].voiced_fraction = 0.75;
  rows[0].spectral_centroid_hz = 430.0;
  rows[0].zcr = 512.0;
  rows[0].total_span_ms = 620.0;
  rows[1].speaker_id = "spk0002";
  rows[1].outcome = acoustics::Outcome::FN;
  rows[1].empty_spans = true;

  const auto path = (fs::temp_directory_path() / "sdd_features_test.csv").string();
  acoustics::write_feature_csv(path, rows);
  const auto back = acoustics::read_feature_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].speaker_id == "spk0001");
  CHECK(back[0].outcome == acoustics::Outcome::TP);
  CHECK(back[0].f0_hz.has_value());
  CHECK(*back[0].f0_hz == doctest::Approx(123.25));
  CHECK_FALSE(back[1].f0_hz.has_value());
  CHECK(back[1].empty_spans);
  fs::remove(path);
}
