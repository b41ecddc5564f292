#include "sdd/relevancy.hpp"

#include <numeric>

namespace sdd::relevancy {

InterpretationResult interpret(const model::Net<float>& net,
                               const std::vector<const dsp::MelSpectrogram*>& specs, int k,
                               double tau, std::optional<int> target_class,
                               const dsp::DspConfig& dcfg) {
  auto pass = net.speech_forward(specs, model::RunMode::kEval);

  InterpretationResult result;
  result.target_class =
      target_class.value_or(pass.logits[1] > pass.logits[0] ? 1 : 0);

  std::array<float, 2> dlogits{0.0f, 0.0f};
  dlogits[result.target_class] = 1.0f;
  auto grads = model::Net<float>::shaped_params(net.cfg);
  grads.set_zero();
  net.backward_speech(pass, dlogits, grads, /*record_grad_attn=*/true);

  result.sentence_scores = cls_row_scores(pass.trace);

  const int n = pass.n_sentences;
  const int k_eff = std::min(k, n);
  result.k_truncated = k_eff < k;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (result.sentence_scores[a] != result.sentence_scores[b])
      return result.sentence_scores[a] > result.sentence_scores[b];
    return a < b;
  });
  result.top_sentences.assign(order.begin(), order.begin() + k_eff);

  for (int idx : result.top_sentences) {
    SentenceInterpretation si;
    si.sentence_index = idx;
    si.score = result.sentence_scores[idx];
    auto fs = frame_scores_from_trace(pass.sentences[idx].trace,
                                      specs[idx]->valid_frames, net.cfg.frame_width);
    si.frames = std::move(fs.frames);
    si.frame_scores = std::move(fs.scores);
    si.degenerate_minmax = fs.degenerate;
    for (size_t i = 0; i < si.frames.size(); ++i) {
      if (!si.frame_scores.empty() && si.frame_scores[i] > tau)
        si.relevant_frames.push_back(si.frames[i]);
    }
    si.spans = acoustics::merge_spans(si.relevant_frames, specs[idx]->valid_frames, dcfg);
    result.per_sentence.push_back(std::move(si));
  }
  return result;
}

}  // namespace sdd::relevancy
