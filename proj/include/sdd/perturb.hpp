#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdd/corpus_io.hpp"
#include "sdd/model.hpp"

namespace sdd::perturb {

enum class Mode { kRelevantSentences, kRandomSentences, kRelevantFrames, kRandomFrames };
const char* mode_name(Mode m);

struct PerturbationCurve {
  Mode mode = Mode::kRelevantSentences;
  std::vector<int> x;     // cumulative sentence-removal counts per step
  std::vector<double> y;  // dev accuracy per step
  double tau = 0.3;
};

// Removes the listed sentences; survivors keep their relative order.
Speech ablate_sentences(const Speech& speech, const std::vector<int>& indices);

// Masks the listed frames for attention; spectrogram values are untouched.
Sentence ablate_frames(const Sentence& sentence, const std::vector<int>& frame_indices);

// P(depressed) with a prevalence fallback when no sentences remain.
double speech_probability_or_prior(const model::Net<float>& net, const Speech& speech,
                                   double prevalence);

struct SuiteResult {
  std::vector<PerturbationCurve> curves;  // one per Mode, in enum order
  double prevalence = 0.0;
  double accuracy_floor = 0.0;  // min(prevalence, 1 - prevalence)
};

// Fig.-3-style faithfulness curves on the dev split: relevance-ranked and
// random sentence exclusion, and relevant-frame vs random-frame masking
// within the top-ranked sentences. Random baselines average over the seeds.
SuiteResult perturbation_suite(const model::Net<float>& net, const Corpus& corpus,
                               int sentence_step, double tau,
                               const std::vector<uint64_t>& seeds,
                               double random_frame_fraction);

}  // namespace sdd::perturb
