#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sdd/corpus_io.hpp"
#include "sdd/dsp.hpp"
#include "sdd/model.hpp"

namespace sdd::acoustics {

struct SampleSpan {
  int64_t begin = 0;
  int64_t end = 0;  // exclusive
  int64_t length() const { return end - begin; }
  bool operator==(const SampleSpan&) const = default;
};

// Per-frame sample spans, unioned where they overlap or touch, sorted.
std::vector<SampleSpan> merge_spans(const std::vector<int>& frames, int valid_frames,
                                    const dsp::DspConfig& cfg);

// 20*log10(max(rms, 1e-6)); silence floors at -120 dB.
double rms_loudness_db(const dsp::Waveform& w, SampleSpan span);

struct F0Estimate {
  bool voiced = false;
  double f0_hz = 0.0;
  double confidence = 0.0;  // normalized autocorrelation peak
};

// Normalized autocorrelation over 50-400 Hz lags with parabolic peak
// interpolation; voiced iff the peak reaches 0.5. Span must cover >= 40 ms.
F0Estimate f0_autocorr(const dsp::Waveform& w, SampleSpan span);

// Energy-weighted spectral centroid over analysis frames within the span.
double spectral_centroid_hz(const dsp::Waveform& w, SampleSpan span, const dsp::DspConfig& cfg);

// Sign changes per second.
double zero_crossing_rate(const dsp::Waveform& w, SampleSpan span);

enum class Outcome { TP, TN, FP, FN };
const char* outcome_name(Outcome o);
Outcome outcome_from_name(const std::string& s);

struct AcousticFeatureRow {
  std::string speaker_id;
  Outcome outcome = Outcome::TN;
  int covariate = 0;
  double loudness_db = 0.0;
  std::optional<double> f0_hz;  // absent when nothing voiced
  double voiced_fraction = 0.0;
  double spectral_centroid_hz = 0.0;
  double zcr = 0.0;
  double total_span_ms = 0.0;  // 0 flags an empty span set
  bool empty_spans = false;
};

// One row per dev speaker: classify at threshold = corpus prevalence,
// interpret with the predicted class as target, extract features over the
// merged relevant-frame spans. Requires a corpus loaded with waveforms.
std::vector<AcousticFeatureRow> cohort_feature_table(const model::Net<float>& net,
                                                     const Corpus& corpus, int k, double tau);

void write_feature_csv(const std::string& path, const std::vector<AcousticFeatureRow>& rows);
std::vector<AcousticFeatureRow> read_feature_csv(const std::string& path);

}  // namespace sdd::acoustics
