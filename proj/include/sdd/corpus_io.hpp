#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdd/dsp.hpp"
#include "sdd/synthcorpus.hpp"

namespace sdd {

struct Sentence {
  dsp::Waveform waveform;  // empty when the corpus is loaded without audio
  int64_t start_ms = 0;
  int64_t end_ms = 0;
  bool marked = false;
  dsp::MelSpectrogram spectrogram;  // padded to target_frames
  // Frame indices masked out by perturbation; empty means none. The
  // spectrogram values themselves are never modified.
  std::vector<uint8_t> frame_ablation;
};

struct Speech {
  std::string speaker_id;
  int label = 0;
  int covariate = 0;
  std::string split;
  std::vector<Sentence> sentences;
};

struct Corpus {
  synth::CorpusManifest manifest;
  dsp::DspConfig dsp_config;
  std::vector<Speech> speeches;

  std::vector<size_t> split_indices(const std::string& split) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < speeches.size(); ++i)
      if (speeches[i].split == split) out.push_back(i);
    return out;
  }
  double prevalence() const { return manifest.prevalence(); }
};

// Reads manifest + WAVs, computes padded spectrograms. Waveforms are dropped
// after spectrogram extraction unless keep_waveforms is set.
Corpus load_corpus(const std::string& dir, const dsp::DspConfig& cfg, bool keep_waveforms);

}  // namespace sdd
