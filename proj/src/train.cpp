#include "sdd/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "sdd/common.hpp"

namespace sdd::model {

namespace {

std::vector<const dsp::MelSpectrogram*> spec_pointers(const Speech& speech) {
  std::vector<const dsp::MelSpectrogram*> specs;
  specs.reserve(speech.sentences.size());
  for (const auto& s : speech.sentences) specs.push_back(&s.spectrogram);
  return specs;
}

std::vector<const std::vector<uint8_t>*> ablation_pointers(const Speech& speech) {
  std::vector<const std::vector<uint8_t>*> abl;
  abl.reserve(speech.sentences.size());
  bool any = false;
  for (const auto& s : speech.sentences) {
    abl.push_back(s.frame_ablation.empty() ? nullptr : &s.frame_ablation);
    any = any || !s.frame_ablation.empty();
  }
  if (!any) abl.clear();
  return abl;
}

struct Adam {
  std::vector<Mat<float>> m, v;
  int64_t t = 0;

  void init(Params<float>& params) {
    for (auto& p : params.tensors()) {
      m.emplace_back(p.mat->rows, p.mat->cols);
      v.emplace_back(p.mat->rows, p.mat->cols);
    }
  }

  // AdamW update with mean-normalized accumulated gradients. Tensors of the
  // first freeze_prefix sentence-encoder layers are skipped.
  void step(Params<float>& params, Params<float>& grads, double lr, double weight_decay,
            double inv_accum, int freeze_prefix) {
    ++t;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    auto ps = params.tensors();
    auto gs = grads.tensors();
    for (size_t i = 0; i < ps.size(); ++i) {
      if (freeze_prefix > 0 && ps[i].name.starts_with("sent.layer")) {
        const int layer = std::stoi(ps[i].name.substr(10));
        if (layer < freeze_prefix) continue;
      }
      auto& p = *ps[i].mat;
      auto& g = *gs[i].mat;
      auto& mi = m[i];
      auto& vi = v[i];
      for (size_t j = 0; j < p.v.size(); ++j) {
        const double gj = g.v[j] * inv_accum;
        mi.v[j] = static_cast<float>(b1 * mi.v[j] + (1.0 - b1) * gj);
        vi.v[j] = static_cast<float>(b2 * vi.v[j] + (1.0 - b2) * gj * gj);
        const double mhat = mi.v[j] / bc1;
        const double vhat = vi.v[j] / bc2;
        double val = p.v[j] - lr * mhat / (std::sqrt(vhat) + eps);
        val -= lr * weight_decay * val;
        p.v[j] = static_cast<float>(val);
      }
    }
  }
};

}  // namespace

double speech_probability(const Net<float>& net, const Speech& speech) {
  auto specs = spec_pointers(speech);
  auto abl = ablation_pointers(speech);
  auto pass = net.speech_forward(specs, RunMode::kEval, nullptr, abl.empty() ? nullptr : &abl);
  return softmax2(pass.logits)[1];
}

double segment_vote_probability(const Net<float>& net, const Speech& speech) {
  if (speech.sentences.empty())
    throw std::invalid_argument("segment_vote_probability: empty speech");
  int voted = 0;
  for (const auto& s : speech.sentences) {
    auto pass = net.segment_forward(s.spectrogram, RunMode::kEval, nullptr,
                                    s.frame_ablation.empty() ? nullptr : &s.frame_ablation);
    if (pass.logits[1] > pass.logits[0]) ++voted;
  }
  return static_cast<double>(voted) / static_cast<double>(speech.sentences.size());
}

stats::ScoredCohort score_split(const Net<float>& net, const Corpus& corpus,
                                const std::string& split) {
  stats::ScoredCohort cohort;
  for (size_t i : corpus.split_indices(split)) {
    const auto& speech = corpus.speeches[i];
    const double score = net.cfg.variant == "speech" ? speech_probability(net, speech)
                                                     : segment_vote_probability(net, speech);
    cohort.scores.push_back(score);
    cohort.labels.push_back(speech.label);
  }
  return cohort;
}

TrainResult train(const Corpus& corpus, ModelConfig mcfg, const TrainConfig& tcfg) {
  mcfg.variant = tcfg.variant;
  if (tcfg.variant == "segment") mcfg.speech_layers = 0;
  mcfg.validate();

  const auto train_idx = corpus.split_indices("train");
  const auto dev_idx = corpus.split_indices("dev");
  if (train_idx.empty() || dev_idx.empty())
    throw std::invalid_argument("train: corpus needs non-empty train and dev splits");

  Net<float> net(mcfg);
  Adam adam;
  adam.init(net.params);
  Params<float> grads = Net<float>::shaped_params(mcfg);
  grads.set_zero();

  // Segment training treats each sentence as one example with the speaker's
  // label; speech training uses one speech per example (minibatch size 1).
  std::vector<std::pair<size_t, int>> segment_examples;
  if (tcfg.variant == "segment") {
    for (size_t i : train_idx)
      for (size_t s = 0; s < corpus.speeches[i].sentences.size(); ++s)
        segment_examples.emplace_back(i, static_cast<int>(s));
  }

  TrainResult result;
  result.best_dev_loss = std::numeric_limits<double>::infinity();

  auto dev_loss_fn = [&]() {
    double loss = 0.0;
    size_t count = 0;
    for (size_t i : dev_idx) {
      const auto& speech = corpus.speeches[i];
      if (tcfg.variant == "speech") {
        auto pass = net.speech_forward(spec_pointers(speech), RunMode::kEval, nullptr);
        loss += cross_entropy2(pass.logits, speech.label);
        ++count;
      } else {
        for (const auto& s : speech.sentences) {
          auto pass = net.segment_forward(s.spectrogram);
          loss += cross_entropy2(pass.logits, speech.label);
          ++count;
        }
      }
    }
    return loss / static_cast<double>(count);
  };

  int bad_epochs = 0;
  int64_t global_step = 0;
  for (int epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
    const double lr = tcfg.lr * (1.0 - static_cast<double>(epoch) / tcfg.max_epochs);
    auto shuffle_rng = stream_rng(mcfg.seed, 0x10000ULL + epoch);
    auto dropout_rng = stream_rng(mcfg.seed, 0x20000ULL + epoch);

    double train_loss = 0.0;
    size_t n_examples = 0;
    int accumulated = 0;

    auto flush = [&]() {
      if (accumulated == 0) return;
      adam.step(net.params, grads, lr, tcfg.weight_decay, 1.0 / accumulated,
                mcfg.freeze_prefix_layers);
      grads.set_zero();
      accumulated = 0;
    };

    auto check_loss = [&](double loss) {
      if (!std::isfinite(loss))
        throw std::runtime_error("train: loss diverged (seed " + std::to_string(mcfg.seed) +
                                 ", step " + std::to_string(global_step) + ")");
    };

    if (tcfg.variant == "speech") {
      std::vector<size_t> order = train_idx;
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (size_t i : order) {
        const auto& speech = corpus.speeches[i];
        auto pass = net.speech_forward(spec_pointers(speech), RunMode::kTrain, &dropout_rng);
        const double loss = cross_entropy2(pass.logits, speech.label);
        check_loss(loss);
        train_loss += loss;
        ++n_examples;
        const auto p = softmax2(pass.logits);
        std::array<float, 2> dlogits{p[0], p[1]};
        dlogits[speech.label] -= 1.0f;
        net.backward_speech(pass, dlogits, grads);
        ++accumulated;
        ++global_step;
        if (accumulated == tcfg.grad_accum) flush();
      }
    } else {
      auto order = segment_examples;
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (const auto& [i, s] : order) {
        const auto& speech = corpus.speeches[i];
        auto pass = net.segment_forward(speech.sentences[s].spectrogram, RunMode::kTrain,
                                        &dropout_rng);
        const double loss = cross_entropy2(pass.logits, speech.label);
        check_loss(loss);
        train_loss += loss;
        ++n_examples;
        const auto p = softmax2(pass.logits);
        std::array<float, 2> dlogits{p[0], p[1]};
        dlogits[speech.label] -= 1.0f;
        net.backward_segment(pass, dlogits, grads);
        ++accumulated;
        ++global_step;
        if (accumulated == tcfg.grad_accum) flush();
      }
    }
    flush();

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = train_loss / std::max<size_t>(n_examples, 1);
    log.dev_loss = dev_loss_fn();
    log.lr = lr;
    result.history.push_back(log);

    if (log.dev_loss < result.best_dev_loss) {
      result.best_dev_loss = log.dev_loss;
      result.best_epoch = epoch;
      result.best_params = net.params;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= tcfg.patience) break;
    }
  }

  result.model_config = mcfg;
  return result;
}

}  // namespace sdd::model
