#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "sdd/acoustics.hpp"
#include "sdd/common.hpp"
#include "sdd/corpus_io.hpp"
#include "sdd/synthcorpus.hpp"

using namespace sdd;
namespace fs = std::filesystem;

namespace {

synth::SpeakerProfile profile_for_tests() {
  synth::SpeakerProfile p;
  p.speaker_id = "spk-test";
  p.label = 1;
  p.base_f0 = 150.0;
  p.base_loudness_db = -23.0;
  p.marker_density = 0.3;
  return p;
}

std::string fresh_dir(const char* name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("synth_sentence pitch follows the profile (oracle: f0_autocorr)") {
  synth::SynthConfig cfg;
  const auto profile = profile_for_tests();

  std::mt19937_64 rng(42);
  const auto clean = synth::synth_sentence(profile, false, 2.0, cfg, rng);
  const auto est = acoustics::f0_autocorr(clean, {0, static_cast<int64_t>(clean.samples.size())});
  REQUIRE(est.voiced);
  CHECK(std::abs(est.f0_hz - 150.0) < 5.0);

  std::mt19937_64 rng2(42);
  const auto marked = synth::synth_sentence(profile, true, 2.0, cfg, rng2);
  const auto est_m =
      acoustics::f0_autocorr(marked, {0, static_cast<int64_t>(marked.samples.size())});
  REQUIRE(est_m.voiced);
  CHECK(std::abs(est_m.f0_hz - 120.0) < 5.0);  // 150 * 0.8
}

TEST_CASE("marked twin is 6 dB quieter (oracle: rms_loudness_db)") {
  synth::SynthConfig cfg;
  const auto profile = profile_for_tests();
  std::mt19937_64 rng_a(7), rng_b(7);
  const auto clean = synth::synth_sentence(profile, false, 1.5, cfg, rng_a);
  const auto marked = synth::synth_sentence(profile, true, 1.5, cfg, rng_b);
  const acoustics::SampleSpan span{0, static_cast<int64_t>(clean.samples.size())};
  const double diff =
      acoustics::rms_loudness_db(clean, span) - acoustics::rms_loudness_db(marked, span);
  CHECK(std::abs(diff - 6.0) < 0.5);
}

TEST_CASE("marked/unmarked orderings are strict across seeds") {
  synth::SynthConfig cfg;
  const auto profile = profile_for_tests();
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 ra(seed), rb(seed);
    const auto clean = synth::synth_sentence(profile, false, 1.0, cfg, ra);
    const auto marked = synth::synth_sentence(profile, true, 1.0, cfg, rb);
    const acoustics::SampleSpan span{0, static_cast<int64_t>(clean.samples.size())};
    CHECK(acoustics::rms_loudness_db(marked, span) < acoustics::rms_loudness_db(clean, span));
    const auto f_clean = acoustics::f0_autocorr(clean, span);
    const auto f_marked = acoustics::f0_autocorr(marked, span);
    REQUIRE(f_clean.voiced);
    REQUIRE(f_marked.voiced);
    CHECK(f_marked.f0_hz < f_clean.f0_hz);
  }
}

TEST_CASE("synth_sentence duration contract") {
  synth::SynthConfig cfg;
  const auto profile = profile_for_tests();
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(synth::synth_sentence(profile, false, 0.4, cfg, rng), std::invalid_argument);
  CHECK_THROWS_AS(synth::synth_sentence(profile, false, 10.5, cfg, rng), std::invalid_argument);
}

TEST_CASE("generate_corpus: prevalence count, determinism, round trip") {
  synth::SynthConfig cfg;
  cfg.n_speakers = 40;  // desk-size for unit tests
  cfg.sentences_per_speaker = 3;
  cfg.duration_min_s = 0.8;
  cfg.duration_max_s = 1.2;

  const auto dir_a = fresh_dir("sdd_corpus_a");
  const auto manifest_a = synth::generate_corpus(cfg, 123, dir_a);

  SUBCASE("label count matches prevalence within one speaker") {
    int dep = 0;
    for (const auto& s : manifest_a.speakers) dep += s.label;
    const double want = cfg.prevalence * cfg.n_speakers;
    CHECK(std::abs(dep - want) <= 1.0);
  }

  SUBCASE("same seed twice gives a byte-identical manifest") {
    const auto dir_b = fresh_dir("sdd_corpus_b");
    synth::generate_corpus(cfg, 123, dir_b);
    std::ifstream fa(fs::path(dir_a) / "manifest.jsonl", std::ios::binary);
    std::ifstream fb(fs::path(dir_b) / "manifest.jsonl", std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    fs::remove_all(dir_b);
  }

  SUBCASE("manifest round-trips") {
    const auto text = synth::serialize_manifest(manifest_a);
    const auto parsed = synth::parse_manifest(text);
    CHECK(parsed == manifest_a);
  }

  SUBCASE("normal speakers carry no markers, depressed carry round(density*n)") {
    for (const auto& s : manifest_a.speakers) {
      int marked = 0;
      for (const auto& sent : s.sentences) marked += sent.marked;
      if (s.label == 0) {
        CHECK(marked == 0);
      } else {
        CHECK(marked == static_cast<int>(std::lround(cfg.marker_density *
                                                     cfg.sentences_per_speaker)));
      }
    }
  }

  SUBCASE("timestamps strictly increase and corpus loads") {
    dsp::DspConfig dcfg;
    const auto corpus = load_corpus(dir_a, dcfg, false);
    CHECK(corpus.speeches.size() == static_cast<size_t>(cfg.n_speakers));
    for (const auto& sp : corpus.speeches) {
      for (const auto& s : sp.sentences) {
        CHECK(s.spectrogram.n_frames == dcfg.target_frames);
        CHECK(s.spectrogram.valid_frames >= 1);
      }
    }
  }

  fs::remove_all(dir_a);
}

TEST_CASE("split_corpus stratification") {
  SUBCASE("200 speakers at 0.8 give a 160/40 split") {
    synth::CorpusManifest m;
    m.config.n_speakers = 200;
    std::mt19937_64 assign(5);
    std::bernoulli_distribution half(0.5);
    for (int i = 0; i < 200; ++i) {
      synth::SpeakerRecord r;
      r.speaker_id = "s" + std::to_string(i);
      r.label = i < 105 ? 1 : 0;
      r.covariate = half(assign) ? 1 : 0;
      r.sentences.push_back({"x.wav", 0, 1000, false});
      m.speakers.push_back(r);
    }
    std::mt19937_64 rng(9);
    synth::split_corpus(m, 0.8, rng);
    int train = 0, dev = 0;
    for (const auto& s : m.speakers) (s.split == "train" ? train : dev)++;
    CHECK(train == 160);
    CHECK(dev == 40);
    CHECK_FALSE(m.degenerate_split);
  }

  SUBCASE("stratification proportions hold across 100 seeds") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      synth::CorpusManifest m;
      auto arng = stream_rng(seed, 1);
      std::bernoulli_distribution half(0.5);
      std::bernoulli_distribution dep(0.527);
      for (int i = 0; i < 120; ++i) {
        synth::SpeakerRecord r;
        r.speaker_id = "s" + std::to_string(i);
        r.label = dep(arng) ? 1 : 0;
        r.covariate = half(arng) ? 1 : 0;
        r.sentences.push_back({"x.wav", 0, 1000, false});
        m.speakers.push_back(r);
      }
      auto rng = stream_rng(seed, 2);
      synth::split_corpus(m, 0.8, rng);

      auto prop = [&](const std::string& split, auto pred) {
        int n = 0, hit = 0;
        for (const auto& s : m.speakers) {
          if (s.split != split) continue;
          ++n;
          if (pred(s)) ++hit;
        }
        return n ? static_cast<double>(hit) / n : 0.0;
      };
      auto whole = [&](auto pred) {
        int hit = 0;
        for (const auto& s : m.speakers)
          if (pred(s)) ++hit;
        return static_cast<double>(hit) / m.speakers.size();
      };
      auto is_dep = [](const synth::SpeakerRecord& s) { return s.label == 1; };
      auto is_cov = [](const synth::SpeakerRecord& s) { return s.covariate == 1; };
      for (const auto* split : {"train", "dev"}) {
        CHECK(std::abs(prop(split, is_dep) - whole(is_dep)) < 0.05 + 1.0 / 24.0);
        CHECK(std::abs(prop(split, is_cov) - whole(is_cov)) < 0.05 + 1.0 / 24.0);
      }
    }
  }

  SUBCASE("single-class corpus is flagged degenerate but splits") {
    synth::CorpusManifest m;
    for (int i = 0; i < 20; ++i) {
      synth::SpeakerRecord r;
      r.speaker_id = "s" + std::to_string(i);
      r.label = 1;
      r.covariate = i % 2;
      r.sentences.push_back({"x.wav", 0, 1000, false});
      m.speakers.push_back(r);
    }
    std::mt19937_64 rng(3);
    synth::split_corpus(m, 0.8, rng);
    CHECK(m.degenerate_split);
    int train = 0;
    for (const auto& s : m.speakers) train += s.split == "train";
    CHECK(train == 16);
  }

  SUBCASE("fewer than 10 speakers rejected") {
    synth::CorpusManifest m;
    for (int i = 0; i < 5; ++i) {
      synth::SpeakerRecord r;
      r.speaker_id = "s" + std::to_string(i);
      m.speakers.push_back(r);
    }
    std::mt19937_64 rng(3);
    CHECK_THROWS_AS(synth::split_corpus(m, 0.8, rng), std::invalid_argument);
  }
}
