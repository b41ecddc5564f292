#pragma once

#include <string>
#include <vector>

#include "sdd/corpus_io.hpp"
#include "sdd/model.hpp"
#include "sdd/stats.hpp"

namespace sdd::model {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  int grad_accum = 8;
  int max_epochs = 10;
  int patience = 1;
  std::string variant = "speech";  // "speech" | "segment"
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelConfig model_config;
  Params<float> best_params;
  std::vector<EpochLog> history;
  int best_epoch = -1;
  double best_dev_loss = 0.0;
};

// Cross-entropy training with AdamW, gradient accumulation, linear lr decay
// over max_epochs, and early stop when dev loss stops decreasing. The best
// dev-loss parameters are retained.
TrainResult train(const Corpus& corpus, ModelConfig mcfg, const TrainConfig& tcfg);

// P(depressed) for the speech-level model.
double speech_probability(const Net<float>& net, const Speech& speech);

// Fraction of a speaker's sentences classified depressed by the segment model.
double segment_vote_probability(const Net<float>& net, const Speech& speech);

// Dev/train scores for one model variant as a labeled cohort.
stats::ScoredCohort score_split(const Net<float>& net, const Corpus& corpus,
                                const std::string& split);

}  // namespace sdd::model
