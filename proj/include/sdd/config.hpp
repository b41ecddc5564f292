#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdd/dsp.hpp"
#include "sdd/model.hpp"
#include "sdd/synthcorpus.hpp"
#include "sdd/train.hpp"

namespace sdd::cli {

// Layered run configuration for every pipeline stage. Parsed from a plain
// "key = value" text file; unknown keys are rejected. The canonical
// serialization (sorted key=value lines) is embedded in every artifact.
struct RunConfig {
  uint64_t seed = 7;
  synth::SynthConfig synth;
  dsp::DspConfig dsp;
  model::ModelConfig model;
  model::TrainConfig train;
  int interpret_k = 5;
  double interpret_tau = 0.3;
  int perturb_sentence_step = 2;
  double perturb_random_frame_fraction = 0.3;
  int perturb_n_seeds = 5;
  int eval_n_boot = 5000;
  double eval_alpha = 0.05;
  int bonferroni_m = 0;  // 0 = number of feature comparisons
};

// "toy" (defaults above) or "paper-scale" (1024-frame geometry, 12+6 layers,
// 42 sentences, 72-step accumulation, lr 3e-5, sentence step 10).
RunConfig make_preset(const std::string& preset);

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value);
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_file(RunConfig& cfg, const std::string& path);

// Syncs derived fields (synth sample rate, model pad constant/geometry) and
// validates. Call after all overrides.
void finalize(RunConfig& cfg);

std::string serialize(const RunConfig& cfg);
std::string config_hash_hex(const RunConfig& cfg);
std::vector<std::pair<std::string, std::string>> config_items(const RunConfig& cfg);

}  // namespace sdd::cli
