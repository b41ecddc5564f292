#include "sdd/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sdd/common.hpp"
#include "sdd/relevancy.hpp"
#include "sdd/train.hpp"

namespace sdd::perturb {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kRelevantSentences: return "relevant_sentences";
    case Mode::kRandomSentences: return "random_sentences";
    case Mode::kRelevantFrames: return "relevant_frames";
    case Mode::kRandomFrames: return "random_frames";
  }
  return "?";
}

Speech ablate_sentences(const Speech& speech, const std::vector<int>& indices) {
  for (int i : indices) {
    if (i < 0 || i >= static_cast<int>(speech.sentences.size()))
      throw std::invalid_argument("ablate_sentences: index out of range");
  }
  std::vector<char> removed(speech.sentences.size(), 0);
  for (int i : indices) removed[i] = 1;
  Speech out = speech;
  out.sentences.clear();
  for (size_t i = 0; i < speech.sentences.size(); ++i) {
    if (!removed[i]) out.sentences.push_back(speech.sentences[i]);
  }
  return out;
}

Sentence ablate_frames(const Sentence& sentence, const std::vector<int>& frame_indices) {
  const int valid = sentence.spectrogram.valid_frames;
  Sentence out = sentence;
  if (out.frame_ablation.empty()) out.frame_ablation.assign(valid, 0);
  for (int f : frame_indices) {
    if (f < 0 || f >= valid)
      throw std::invalid_argument("ablate_frames: frame outside valid region");
    out.frame_ablation[f] = 1;
  }
  return out;
}

double speech_probability_or_prior(const model::Net<float>& net, const Speech& speech,
                                   double prevalence) {
  if (speech.sentences.empty()) return prevalence;
  return model::speech_probability(net, speech);
}

namespace {

struct SpeakerCache {
  int label = 0;
  int n = 0;
  Mat<float> clean_e;                             // [n x d]
  Mat<float> relevant_e;                          // relevant frames masked
  std::vector<Mat<float>> random_e;               // per seed, random frames masked
  std::vector<int> ranking;                       // sentence indices, relevance desc
  std::vector<std::vector<int>> random_order;     // per seed, sentence removal order
};

Mat<float> sentence_embedding(const model::Net<float>& net, const dsp::MelSpectrogram& spec,
                              const std::vector<uint8_t>* ablation) {
  auto pass = net.sentence_forward(spec, model::RunMode::kEval, nullptr, ablation);
  return pass.cls;
}

double prob_from_rows(const model::Net<float>& net, const Mat<float>& e,
                      const std::vector<int>& keep, double prevalence) {
  if (keep.empty()) return prevalence;
  Mat<float> sub(static_cast<int>(keep.size()), e.cols);
  for (size_t r = 0; r < keep.size(); ++r) {
    const float* src = e.row(keep[r]);
    std::copy(src, src + sub.cols, sub.row(static_cast<int>(r)));
  }
  return model::softmax2(net.speech_logits_from_embeddings(sub))[1];
}

}  // namespace

SuiteResult perturbation_suite(const model::Net<float>& net, const Corpus& corpus,
                               int sentence_step, double tau,
                               const std::vector<uint64_t>& seeds,
                               double random_frame_fraction) {
  if (sentence_step < 1) throw std::invalid_argument("perturbation_suite: bad step");
  if (seeds.empty()) throw std::invalid_argument("perturbation_suite: need seeds");

  const auto dev = corpus.split_indices("dev");
  if (dev.empty()) throw std::invalid_argument("perturbation_suite: empty dev split");
  const double prevalence = corpus.prevalence();
  const int n_seeds = static_cast<int>(seeds.size());

  // Per-speaker caches. Sentence embeddings depend only on the per-sentence
  // mask, never on the step, so every variant is encoded exactly once.
  std::vector<SpeakerCache> cache;
  cache.reserve(dev.size());
  int max_n = 0;
  for (size_t s = 0; s < dev.size(); ++s) {
    const auto& speech = corpus.speeches[dev[s]];
    SpeakerCache sc;
    sc.label = speech.label;
    sc.n = std::min<int>(static_cast<int>(speech.sentences.size()), net.cfg.max_sentences);
    max_n = std::max(max_n, sc.n);

    std::vector<const dsp::MelSpectrogram*> specs;
    for (const auto& sent : speech.sentences) specs.push_back(&sent.spectrogram);
    specs.resize(sc.n);

    sc.clean_e = Mat<float>(sc.n, net.cfg.d_model);
    for (int j = 0; j < sc.n; ++j) {
      auto e = sentence_embedding(net, *specs[j], nullptr);
      std::copy(e.v.begin(), e.v.end(), sc.clean_e.row(j));
    }
    const double prob = model::softmax2(net.speech_logits_from_embeddings(sc.clean_e))[1];
    const int predicted = prob > prevalence ? 1 : 0;

    const auto interp = relevancy::interpret(net, specs, sc.n, tau, predicted, corpus.dsp_config);
    sc.ranking = interp.top_sentences;

    sc.relevant_e = sc.clean_e;
    for (const auto& si : interp.per_sentence) {
      if (si.relevant_frames.empty()) continue;
      const int valid = specs[si.sentence_index]->valid_frames;
      std::vector<uint8_t> abl(valid, 0);
      for (int f : si.relevant_frames) abl[f] = 1;
      auto e = sentence_embedding(net, *specs[si.sentence_index], &abl);
      std::copy(e.v.begin(), e.v.end(), sc.relevant_e.row(si.sentence_index));
    }

    sc.random_e.reserve(n_seeds);
    sc.random_order.reserve(n_seeds);
    for (int si = 0; si < n_seeds; ++si) {
      Mat<float> e = sc.clean_e;
      for (int j = 0; j < sc.n; ++j) {
        const int valid = specs[j]->valid_frames;
        const int n_mask = static_cast<int>(std::lround(random_frame_fraction * valid));
        if (n_mask <= 0) continue;
        std::vector<int> idx(valid);
        std::iota(idx.begin(), idx.end(), 0);
        auto rng = stream_rng(seeds[si], (static_cast<uint64_t>(s) << 16) ^ 0xF8A3ULL ^ j);
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<uint8_t> abl(valid, 0);
        for (int f = 0; f < n_mask; ++f) abl[idx[f]] = 1;
        auto emb = sentence_embedding(net, *specs[j], &abl);
        std::copy(emb.v.begin(), emb.v.end(), e.row(j));
      }
      sc.random_e.push_back(std::move(e));

      std::vector<int> perm(sc.n);
      std::iota(perm.begin(), perm.end(), 0);
      auto rng = stream_rng(seeds[si], 0xA110ULL + s);
      std::shuffle(perm.begin(), perm.end(), rng);
      sc.random_order.push_back(std::move(perm));
    }
    cache.push_back(std::move(sc));
  }

  const int n_steps = (max_n + sentence_step - 1) / sentence_step;
  SuiteResult result;
  result.prevalence = prevalence;
  result.accuracy_floor = std::min(prevalence, 1.0 - prevalence);

  auto survivors = [](int n, const std::vector<int>& removed_order, int count) {
    std::vector<char> removed(n, 0);
    for (int i = 0; i < count; ++i) removed[removed_order[i]] = 1;
    std::vector<int> keep;
    for (int i = 0; i < n; ++i)
      if (!removed[i]) keep.push_back(i);
    return keep;
  };

  for (Mode mode : {Mode::kRelevantSentences, Mode::kRandomSentences, Mode::kRelevantFrames,
                    Mode::kRandomFrames}) {
    PerturbationCurve curve;
    curve.mode = mode;
    curve.tau = tau;
    const bool random = mode == Mode::kRandomSentences || mode == Mode::kRandomFrames;
    const int reps = random ? n_seeds : 1;

    for (int step = 0; step <= n_steps; ++step) {
      const int count = step * sentence_step;
      double acc_sum = 0.0;
      for (int rep = 0; rep < reps; ++rep) {
        int correct = 0;
        for (const auto& sc : cache) {
          const int c = std::min(count, sc.n);
          const std::vector<int>& order =
              mode == Mode::kRandomSentences ? sc.random_order[rep] : sc.ranking;
          double prob = 0.0;
          switch (mode) {
            case Mode::kRelevantSentences:
            case Mode::kRandomSentences:
              prob = prob_from_rows(net, sc.clean_e, survivors(sc.n, order, c), prevalence);
              break;
            case Mode::kRelevantFrames:
            case Mode::kRandomFrames: {
              Mat<float> e = sc.clean_e;
              const Mat<float>& masked =
                  mode == Mode::kRelevantFrames ? sc.relevant_e : sc.random_e[rep];
              for (int i = 0; i < c; ++i) {
                const int sent = sc.ranking[i];
                const float* src = masked.row(sent);
                std::copy(src, src + e.cols, e.row(sent));
              }
              std::vector<int> keep(sc.n);
              std::iota(keep.begin(), keep.end(), 0);
              prob = prob_from_rows(net, e, keep, prevalence);
              break;
            }
          }
          const int predicted = prob > prevalence ? 1 : 0;
          if (predicted == sc.label) ++correct;
        }
        acc_sum += static_cast<double>(correct) / static_cast<double>(cache.size());
      }
      curve.x.push_back(count);
      curve.y.push_back(acc_sum / static_cast<double>(reps));
    }
    result.curves.push_back(std::move(curve));
  }
  return result;
}

}  // namespace sdd::perturb
