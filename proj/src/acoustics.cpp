#include "sdd/acoustics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sdd/relevancy.hpp"
#include "sdd/train.hpp"

namespace sdd::acoustics {

std::vector<SampleSpan> merge_spans(const std::vector<int>& frames, int valid_frames,
                                    const dsp::DspConfig& cfg) {
  if (frames.empty()) return {};
  std::vector<SampleSpan> spans;
  spans.reserve(frames.size());
  for (int f : frames) {
    const auto [begin, end] = dsp::frame_sample_span(f, valid_frames, cfg);
    spans.push_back({begin, end});
  }
  std::sort(spans.begin(), spans.end(),
            [](const SampleSpan& a, const SampleSpan& b) { return a.begin < b.begin; });
  std::vector<SampleSpan> merged;
  for (const auto& s : spans) {
    if (!merged.empty() && s.begin <= merged.back().end) {
      merged.back().end = std::max(merged.back().end, s.end);
    } else {
      merged.push_back(s);
    }
  }
  return merged;
}

namespace {

void check_span(const dsp::Waveform& w, SampleSpan span) {
  if (span.begin < 0 || span.end <= span.begin ||
      span.end > static_cast<int64_t>(w.samples.size()))
    throw std::invalid_argument("span out of range or empty");
}

}  // namespace

double rms_loudness_db(const dsp::Waveform& w, SampleSpan span) {
  check_span(w, span);
  double ss = 0.0;
  for (int64_t i = span.begin; i < span.end; ++i) {
    const double x = w.samples[i];
    ss += x * x;
  }
  const double rms = std::sqrt(ss / static_cast<double>(span.length()));
  return 20.0 * std::log10(std::max(rms, 1e-6));
}

F0Estimate f0_autocorr(const dsp::Waveform& w, SampleSpan span) {
  check_span(w, span);
  const int sr = w.sample_rate;
  const int64_t n = span.length();
  if (n * 1000 < 40 * sr)
    throw std::invalid_argument("f0_autocorr: span must cover at least 40 ms");

  const int lag_min = sr / 400;
  const int lag_max = std::min<int64_t>(sr / 50, n - 1);

  std::vector<double> x(n);
  double mean = 0.0;
  for (int64_t i = 0; i < n; ++i) mean += w.samples[span.begin + i];
  mean /= static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) x[i] = w.samples[span.begin + i] - mean;

  // Normalized cross-correlation per lag.
  std::vector<double> r(lag_max + 1, 0.0);
  std::vector<double> prefix_sq(n + 1, 0.0);
  for (int64_t i = 0; i < n; ++i) prefix_sq[i + 1] = prefix_sq[i] + x[i] * x[i];
  for (int lag = lag_min; lag <= lag_max; ++lag) {
    double num = 0.0;
    const int64_t m = n - lag;
    for (int64_t i = 0; i < m; ++i) num += x[i] * x[i + lag];
    const double e0 = prefix_sq[m];
    const double e1 = prefix_sq[n] - prefix_sq[lag];
    const double denom = std::sqrt(e0 * e1);
    r[lag] = denom > 1e-12 ? num / denom : 0.0;
  }

  double peak = 0.0;
  for (int lag = lag_min; lag <= lag_max; ++lag) peak = std::max(peak, r[lag]);

  F0Estimate est;
  est.confidence = peak;
  if (peak < 0.5) return est;

  // Earliest local maximum close to the global peak; avoids octave errors
  // when the signal correlates equally at multiples of the period.
  int best = -1;
  for (int lag = lag_min; lag <= lag_max; ++lag) {
    const bool local_max = (lag == lag_min || r[lag] >= r[lag - 1]) &&
                           (lag == lag_max || r[lag] >= r[lag + 1]);
    if (local_max && r[lag] >= 0.99 * peak) {
      best = lag;
      break;
    }
  }
  if (best < 0) return est;

  double lag_refined = best;
  if (best > lag_min && best < lag_max) {
    const double a = r[best - 1], b = r[best], c = r[best + 1];
    const double denom = a - 2.0 * b + c;
    if (std::abs(denom) > 1e-12) {
      const double delta = 0.5 * (a - c) / denom;
      if (std::abs(delta) <= 1.0) lag_refined += delta;
    }
  }
  est.voiced = true;
  est.f0_hz = static_cast<double>(sr) / lag_refined;
  est.confidence = r[best];
  return est;
}

double spectral_centroid_hz(const dsp::Waveform& w, SampleSpan span, const dsp::DspConfig& cfg) {
  check_span(w, span);
  const auto window = dsp::hamming_window(cfg.win_length);
  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.n_fft;

  double wsum = 0.0, esum = 0.0;
  int64_t start = span.begin;
  // Frame-based: centroid per analysis frame, energy weighted. Falls back to
  // a single short frame when the span is shorter than one window.
  const int64_t win = cfg.win_length;
  if (span.length() < win) {
    const int len = static_cast<int>(span.length());
    const auto ps = dsp::power_spectrum(w.samples.data() + span.begin, len, window, cfg.n_fft);
    for (size_t k = 0; k < ps.size(); ++k) {
      wsum += ps[k] * static_cast<double>(k) * bin_hz;
      esum += ps[k];
    }
  } else {
    for (; start + win <= span.end; start += cfg.hop_length) {
      const auto ps = dsp::power_spectrum(w.samples.data() + start, cfg.win_length, window,
                                          cfg.n_fft);
      for (size_t k = 0; k < ps.size(); ++k) {
        wsum += ps[k] * static_cast<double>(k) * bin_hz;
        esum += ps[k];
      }
    }
  }
  return esum > 1e-20 ? wsum / esum : 0.0;
}

double zero_crossing_rate(const dsp::Waveform& w, SampleSpan span) {
  check_span(w, span);
  int64_t crossings = 0;
  for (int64_t i = span.begin + 1; i < span.end; ++i) {
    const bool pos_prev = w.samples[i - 1] >= 0.0f;
    const bool pos = w.samples[i] >= 0.0f;
    if (pos != pos_prev) ++crossings;
  }
  const double seconds = static_cast<double>(span.length()) / w.sample_rate;
  return static_cast<double>(crossings) / seconds;
}

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::TP: return "TP";
    case Outcome::TN: return "TN";
    case Outcome::FP: return "FP";
    case Outcome::FN: return "FN";
  }
  return "?";
}

Outcome outcome_from_name(const std::string& s) {
  if (s == "TP") return Outcome::TP;
  if (s == "TN") return Outcome::TN;
  if (s == "FP") return Outcome::FP;
  if (s == "FN") return Outcome::FN;
  throw std::invalid_argument("unknown outcome: " + s);
}

std::vector<AcousticFeatureRow> cohort_feature_table(const model::Net<float>& net,
                                                     const Corpus& corpus, int k, double tau) {
  const double threshold = corpus.prevalence();
  const auto dev = corpus.split_indices("dev");
  const int min_f0_samples = corpus.dsp_config.sample_rate * 40 / 1000;

  std::vector<AcousticFeatureRow> rows;
  for (size_t idx : dev) {
    const auto& speech = corpus.speeches[idx];
    if (speech.sentences.empty() || speech.sentences[0].waveform.samples.empty())
      throw std::invalid_argument("cohort_feature_table: corpus must be loaded with waveforms");

    const double prob = model::speech_probability(net, speech);
    const int predicted = prob > threshold ? 1 : 0;

    AcousticFeatureRow row;
    row.speaker_id = speech.speaker_id;
    row.covariate = speech.covariate;
    row.outcome = predicted ? (speech.label ? Outcome::TP : Outcome::FP)
                            : (speech.label ? Outcome::FN : Outcome::TN);

    std::vector<const dsp::MelSpectrogram*> specs;
    for (const auto& s : speech.sentences) specs.push_back(&s.spectrogram);
    const auto interp =
        relevancy::interpret(net, specs, k, tau, predicted, corpus.dsp_config);

    double energy = 0.0;
    int64_t total_samples = 0;
    double f0_weighted = 0.0;
    int64_t voiced_samples = 0, analyzable_samples = 0;
    double centroid_weighted = 0.0;
    int64_t crossings_time = 0;
    double crossings = 0.0;

    for (const auto& si : interp.per_sentence) {
      const auto& w = speech.sentences[si.sentence_index].waveform;
      for (const auto& span : si.spans) {
        total_samples += span.length();
        for (int64_t i = span.begin; i < span.end; ++i) {
          const double x = w.samples[i];
          energy += x * x;
        }
        centroid_weighted +=
            spectral_centroid_hz(w, span, corpus.dsp_config) * static_cast<double>(span.length());
        crossings += zero_crossing_rate(w, span) * static_cast<double>(span.length()) /
                     w.sample_rate;
        crossings_time += span.length();
        if (span.length() >= min_f0_samples) {
          analyzable_samples += span.length();
          const auto f0 = f0_autocorr(w, span);
          if (f0.voiced) {
            voiced_samples += span.length();
            f0_weighted += f0.f0_hz * static_cast<double>(span.length());
          }
        }
      }
    }

    if (total_samples == 0) {
      row.empty_spans = true;
      rows.push_back(row);
      continue;
    }
    const int sr = corpus.dsp_config.sample_rate;
    row.total_span_ms = 1000.0 * static_cast<double>(total_samples) / sr;
    const double rms = std::sqrt(energy / static_cast<double>(total_samples));
    row.loudness_db = 20.0 * std::log10(std::max(rms, 1e-6));
    row.spectral_centroid_hz = centroid_weighted / static_cast<double>(total_samples);
    row.zcr = crossings / (static_cast<double>(crossings_time) / sr);
    row.voiced_fraction = analyzable_samples > 0 ? static_cast<double>(voiced_samples) /
                                                       static_cast<double>(analyzable_samples)
                                                 : 0.0;
    if (voiced_samples > 0) row.f0_hz = f0_weighted / static_cast<double>(voiced_samples);
    rows.push_back(row);
  }
  return rows;
}

void write_feature_csv(const std::string& path, const std::vector<AcousticFeatureRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << "speaker_id,outcome,covariate,loudness_db,f0_hz,voiced_fraction,"
         "spectral_centroid_hz,zcr,total_span_ms,empty_spans\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out << r.speaker_id << ',' << outcome_name(r.outcome) << ',' << r.covariate << ','
        << num(r.loudness_db) << ',' << (r.f0_hz ? num(*r.f0_hz) : std::string()) << ','
        << num(r.voiced_fraction) << ',' << num(r.spectral_centroid_hz) << ',' << num(r.zcr)
        << ',' << num(r.total_span_ms) << ',' << (r.empty_spans ? 1 : 0) << '\n';
  }
  if (!out) throw std::runtime_error("short write: " + path);
}

std::vector<AcousticFeatureRow> read_feature_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path);
  std::vector<AcousticFeatureRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 10) cells.emplace_back();
    AcousticFeatureRow r;
    r.speaker_id = cells[0];
    r.outcome = outcome_from_name(cells[1]);
    r.covariate = std::stoi(cells[2]);
    r.loudness_db = std::stod(cells[3]);
    if (!cells[4].empty()) r.f0_hz = std::stod(cells[4]);
    r.voiced_fraction = std::stod(cells[5]);
    r.spectral_centroid_hz = std::stod(cells[6]);
    r.zcr = std::stod(cells[7]);
    r.total_span_ms = std::stod(cells[8]);
    r.empty_spans = cells[9] == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace sdd::acoustics
