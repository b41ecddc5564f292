#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sdd/dsp.hpp"

namespace sdd::synth {

struct SpeakerProfile {
  std::string speaker_id;
  int label = 0;       // 1 = depressed
  int covariate = 0;   // binary "sex" covariate
  double base_f0 = 150.0;
  double base_loudness_db = -23.0;  // dBFS
  int n_sentences = 12;
  double marker_density = 0.0;  // 0 for normal speakers
};

struct SynthConfig {
  int n_speakers = 200;
  double prevalence = 0.527;
  int sentences_per_speaker = 12;
  double marker_density = 0.3;
  double marker_f0_ratio = 0.8;
  double marker_db_drop = 6.0;
  double duration_min_s = 1.0;
  double duration_max_s = 3.0;
  double f0_low_hz = 110.0;
  double f0_high_hz = 180.0;
  double covariate_f0_shift_hz = 60.0;  // added for covariate group 1
  double loudness_low_db = -26.0;
  double loudness_high_db = -20.0;
  double noise_db_rel = -40.0;  // noise level relative to the harmonic part
  double split_ratio = 0.8;
  int sample_rate = 16000;

  bool operator==(const SynthConfig&) const = default;
};

struct SentenceMeta {
  std::string path;  // relative to the corpus directory
  int64_t start_ms = 0;
  int64_t end_ms = 0;
  bool marked = false;

  bool operator==(const SentenceMeta&) const = default;
};

struct SpeakerRecord {
  std::string speaker_id;
  int label = 0;
  int covariate = 0;
  std::string split;  // "train" | "dev" | "" before splitting
  std::vector<SentenceMeta> sentences;

  bool operator==(const SpeakerRecord&) const = default;
};

struct CorpusManifest {
  uint64_t seed = 0;
  SynthConfig config;
  bool degenerate_split = false;  // single-class corpus or merged strata
  std::vector<SpeakerRecord> speakers;

  bool operator==(const CorpusManifest&) const = default;
  double prevalence() const;  // empirical fraction of depressed speakers
};

// Harmonic sentence synthesis: 8 harmonics of a slowly drifting F0 contour,
// loudness set point in dBFS, low-level noise, raised-cosine fades. Markers
// scale F0 by marker_f0_ratio and drop loudness by marker_db_drop.
dsp::Waveform synth_sentence(const SpeakerProfile& profile, bool marked, double duration_s,
                             const SynthConfig& cfg, std::mt19937_64& rng);

// Writes one WAV per sentence under out_dir/wav plus manifest.jsonl.
CorpusManifest generate_corpus(const SynthConfig& cfg, uint64_t seed, const std::string& out_dir);

// Speaker-disjoint split, stratified on (label x covariate), assigning
// "train"/"dev" in place. Strata smaller than 2 are merged with a warning.
void split_corpus(CorpusManifest& manifest, double ratio, std::mt19937_64& rng);

std::string serialize_manifest(const CorpusManifest& m);
CorpusManifest parse_manifest(const std::string& jsonl);
void write_manifest(const std::string& path, const CorpusManifest& m);
CorpusManifest read_manifest(const std::string& path);

}  // namespace sdd::synth
