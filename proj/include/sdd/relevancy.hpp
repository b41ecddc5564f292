#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include "sdd/acoustics.hpp"
#include "sdd/mat.hpp"
#include "sdd/model.hpp"

namespace sdd::relevancy {

// Head-averaged gradient-weighted attention with negative contributions
// removed: mean over heads of max(gradA .* A, 0).
template <class T>
Mat<double> weighted_attention(const std::vector<Mat<T>>& attn,
                               const std::vector<Mat<T>>& grad_attn) {
  if (attn.empty() || attn.size() != grad_attn.size())
    throw std::invalid_argument("weighted_attention: head count mismatch");
  const int n = attn[0].rows;
  for (size_t h = 0; h < attn.size(); ++h) {
    if (attn[h].rows != n || attn[h].cols != n || grad_attn[h].rows != n ||
        grad_attn[h].cols != n)
      throw std::invalid_argument("weighted_attention: shape mismatch");
  }
  Mat<double> abar(n, n);
  const double inv_h = 1.0 / static_cast<double>(attn.size());
  for (size_t h = 0; h < attn.size(); ++h) {
    for (size_t i = 0; i < abar.v.size(); ++i) {
      const double prod = static_cast<double>(attn[h].v[i]) * static_cast<double>(grad_attn[h].v[i]);
      if (prod > 0.0) abar.v[i] += prod * inv_h;
    }
  }
  return abar;
}

// One relevancy update: R <- R + Abar * R.
inline void propagate(Mat<double>& r, const Mat<double>& abar) {
  if (r.rows != r.cols || abar.rows != r.rows || abar.cols != r.cols)
    throw std::invalid_argument("propagate: square size mismatch");
  Mat<double> delta(r.rows, r.cols);
  la::gemm_nn(false, r.rows, r.rows, r.cols, abar.data(), abar.cols, r.data(), r.cols,
              delta.data(), delta.cols);
  for (size_t i = 0; i < r.v.size(); ++i) r.v[i] += delta.v[i];
}

// Builds the relevancy map over all recorded layers of one block, identity
// initialized, updated in forward order.
template <class T>
Mat<double> relevancy_map(const model::BlockTrace<T>& trace) {
  if (!trace.has_gradients())
    throw std::logic_error("relevancy_map: trace has no attention gradients");
  const int n = trace.attn.empty() ? 0 : trace.attn[0][0].rows;
  Mat<double> r(n, n);
  for (int i = 0; i < n; ++i) r(i, i) = 1.0;
  for (size_t l = 0; l < trace.attn.size(); ++l) {
    propagate(r, weighted_attention(trace.attn[l], trace.grad_attn[l]));
  }
  return r;
}

// First (cls) row of the relevancy map at non-cls positions.
template <class T>
std::vector<double> cls_row_scores(const model::BlockTrace<T>& trace) {
  const Mat<double> r = relevancy_map(trace);
  std::vector<double> scores(r.cols - 1);
  for (int j = 1; j < r.cols; ++j) scores[j - 1] = r(0, j);
  return scores;
}

struct FrameScores {
  std::vector<int> frames;          // unmasked valid frames, ascending
  std::vector<double> scores;       // min-max normalized, aligned with frames
  bool degenerate = false;          // all raw scores equal
};

// Token scores fan out to both source frames; masked tokens and padding
// frames are excluded before min-max normalization.
template <class T>
FrameScores frame_scores_from_trace(const model::BlockTrace<T>& trace, int valid_frames,
                                    int frame_width) {
  const auto token_scores = cls_row_scores(trace);
  FrameScores out;
  std::vector<double> raw;
  for (size_t p = 0; p < token_scores.size(); ++p) {
    if (!trace.token_valid[p + 1]) continue;
    for (int f = 0; f < frame_width; ++f) {
      const int frame = static_cast<int>(p) * frame_width + f;
      if (frame >= valid_frames) continue;
      out.frames.push_back(frame);
      raw.push_back(token_scores[p]);
    }
  }
  if (raw.empty()) return out;
  const auto [mn_it, mx_it] = std::minmax_element(raw.begin(), raw.end());
  const double mn = *mn_it, mx = *mx_it;
  out.scores.resize(raw.size());
  if (mx - mn < 1e-300) {
    out.degenerate = true;  // min-max undefined; report all zeros
  } else {
    for (size_t i = 0; i < raw.size(); ++i) out.scores[i] = (raw[i] - mn) / (mx - mn);
  }
  return out;
}

struct SentenceInterpretation {
  int sentence_index = 0;
  double score = 0.0;
  std::vector<int> frames;
  std::vector<double> frame_scores;
  std::vector<int> relevant_frames;  // frame_scores > tau
  std::vector<acoustics::SampleSpan> spans;
  bool degenerate_minmax = false;
};

struct InterpretationResult {
  int target_class = 1;
  std::vector<double> sentence_scores;
  std::vector<int> top_sentences;  // sorted by score desc, ties by lower index
  std::vector<SentenceInterpretation> per_sentence;  // one per top sentence
  bool k_truncated = false;  // speech had fewer than k sentences
};

// Full hierarchy: speech-level sentence ranking, then per-frame scores and
// thresholded waveform spans for the top-k sentences. target_class defaults
// to the predicted class (argmax of the logits).
InterpretationResult interpret(const model::Net<float>& net,
                               const std::vector<const dsp::MelSpectrogram*>& specs, int k,
                               double tau, std::optional<int> target_class,
                               const dsp::DspConfig& dcfg);

}  // namespace sdd::relevancy
