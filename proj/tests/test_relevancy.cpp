#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "sdd/relevancy.hpp"
#include "test_helpers.hpp"

using namespace sdd;
using namespace sdd::model;
using testutil::make_spec;
using testutil::tiny_config;

namespace {

// Dense oracle: head-averaged positive part, then R <- R + Abar*R, all in
// naive triple loops.
Mat<double> oracle_relevancy(const BlockTrace<double>& trace) {
  const int n = trace.attn[0][0].rows;
  Mat<double> r(n, n);
  for (int i = 0; i < n; ++i) r(i, i) = 1.0;
  for (size_t l = 0; l < trace.attn.size(); ++l) {
    Mat<double> abar(n, n);
    const double inv_h = 1.0 / static_cast<double>(trace.attn[l].size());
    for (size_t h = 0; h < trace.attn[l].size(); ++h) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          const double prod = trace.attn[l][h](i, j) * trace.grad_attn[l][h](i, j);
          if (prod > 0) abar(i, j) += prod * inv_h;
        }
      }
    }
    Mat<double> next(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double acc = r(i, j);
        for (int k = 0; k < n; ++k) acc += abar(i, k) * r(k, j);
        next(i, j) = acc;
      }
    }
    r = next;
  }
  return r;
}

BlockTrace<double> random_trace(int layers, int heads, int n, uint64_t seed) {
  BlockTrace<double> trace;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  trace.attn.resize(layers);
  trace.grad_attn.resize(layers);
  trace.token_valid.assign(n, 1);
  for (int l = 0; l < layers; ++l) {
    for (int h = 0; h < heads; ++h) {
      Mat<double> a(n, n), g(n, n);
      for (int i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (int j = 0; j < n; ++j) {
          a(i, j) = std::abs(d(rng));
          row_sum += a(i, j);
        }
        for (int j = 0; j < n; ++j) a(i, j) /= row_sum;
        for (int j = 0; j < n; ++j) g(i, j) = d(rng);
      }
      trace.attn[l].push_back(std::move(a));
      trace.grad_attn[l].push_back(std::move(g));
    }
  }
  return trace;
}

}  // namespace

TEST_CASE("weighted_attention") {
  SUBCASE("unit gradients average the heads") {
    std::vector<Mat<double>> a(2, Mat<double>(2, 2)), g(2, Mat<double>(2, 2));
    a[0](0, 0) = 0.7;
    a[0](0, 1) = 0.3;
    a[0](1, 0) = 0.2;
    a[0](1, 1) = 0.8;
    a[1](0, 0) = 0.5;
    a[1](0, 1) = 0.5;
    a[1](1, 0) = 0.9;
    a[1](1, 1) = 0.1;
    for (auto& m : g) std::fill(m.v.begin(), m.v.end(), 1.0);
    const auto abar = relevancy::weighted_attention(a, g);
    CHECK(abar(0, 0) == doctest::Approx(0.6));
    CHECK(abar(0, 1) == doctest::Approx(0.4));
    CHECK(abar(1, 0) == doctest::Approx(0.55));
    CHECK(abar(1, 1) == doctest::Approx(0.45));
  }
  SUBCASE("negative contributions are removed") {
    std::vector<Mat<double>> a(1, Mat<double>(2, 2)), g(1, Mat<double>(2, 2));
    std::fill(a[0].v.begin(), a[0].v.end(), 0.5);
    std::fill(g[0].v.begin(), g[0].v.end(), -3.0);
    const auto abar = relevancy::weighted_attention(a, g);
    for (double v : abar.v) CHECK(v == 0.0);
  }
  SUBCASE("hand-computed two-head case") {
    std::vector<Mat<double>> a(2, Mat<double>(2, 2)), g(2, Mat<double>(2, 2));
    a[0].v = {0.6, 0.4, 0.1, 0.9};
    g[0].v = {2.0, -1.0, 0.5, 1.0};
    a[1].v = {0.3, 0.7, 0.5, 0.5};
    g[1].v = {-2.0, 3.0, 1.0, -4.0};
    const auto abar = relevancy::weighted_attention(a, g);
    // mean over heads of max(a*g, 0)
    CHECK(abar(0, 0) == doctest::Approx(0.5 * (1.2 + 0.0)));
    CHECK(abar(0, 1) == doctest::Approx(0.5 * (0.0 + 2.1)));
    CHECK(abar(1, 0) == doctest::Approx(0.5 * (0.05 + 0.5)));
    CHECK(abar(1, 1) == doctest::Approx(0.5 * (0.9 + 0.0)));
  }
  SUBCASE("shape mismatch rejected") {
    std::vector<Mat<double>> a(1, Mat<double>(2, 2)), g(1, Mat<double>(3, 3));
    CHECK_THROWS_AS(relevancy::weighted_attention(a, g), std::invalid_argument);
  }
}

TEST_CASE("propagate") {
  SUBCASE("identity start gives I + Abar") {
    Mat<double> r(3, 3);
    for (int i = 0; i < 3; ++i) r(i, i) = 1.0;
    Mat<double> abar(3, 3);
    for (int i = 0; i < 9; ++i) abar.v[i] = 0.1 * (i + 1);
    relevancy::propagate(r, abar);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(r(i, j) == doctest::Approx((i == j ? 1.0 : 0.0) + abar(i, j)));
  }
  SUBCASE("zero update leaves R unchanged") {
    Mat<double> r(3, 3);
    for (int i = 0; i < 3; ++i) r(i, i) = 1.0;
    r(0, 2) = 0.4;
    const Mat<double> before = r;
    relevancy::propagate(r, Mat<double>(3, 3));
    CHECK(r.v == before.v);
  }
  SUBCASE("two layers expand to I + A2 (I + A1) + A1") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 0.5);
    Mat<double> a1(3, 3), a2(3, 3);
    for (auto& v : a1.v) v = u(rng);
    for (auto& v : a2.v) v = u(rng);
    Mat<double> r(3, 3);
    for (int i = 0; i < 3; ++i) r(i, i) = 1.0;
    relevancy::propagate(r, a1);
    relevancy::propagate(r, a2);
    // expected = (I + A2)(I + A1) expanded by hand
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double expect = (i == j ? 1.0 : 0.0) + a1(i, j) + a2(i, j);
        for (int k = 0; k < 3; ++k) expect += a2(i, k) * a1(k, j);
        CHECK(r(i, j) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("relevancy map matches the dense oracle on recorded traces") {
  for (int layers : {1, 2}) {
    ModelConfig cfg = tiny_config(71 + layers);
    cfg.sentence_layers = layers;
    cfg.speech_layers = layers;
    Net<double> net(cfg);
    std::mt19937_64 rng(72);
    std::vector<dsp::MelSpectrogram> specs;
    for (int i = 0; i < 3; ++i)
      specs.push_back(make_spec(cfg.n_mels, cfg.target_frames,
                                i == 1 ? 9 : cfg.target_frames, rng, cfg.pad_value));
    std::vector<const dsp::MelSpectrogram*> ptrs;
    for (auto& s : specs) ptrs.push_back(&s);

    auto pass = net.speech_forward(ptrs, RunMode::kEval);
    auto grads = Net<double>::shaped_params(cfg);
    grads.set_zero();
    net.backward_speech(pass, {0.0, 1.0}, grads, true);

    const auto r_speech = oracle_relevancy(pass.trace);
    const auto scores = relevancy::cls_row_scores(pass.trace);
    REQUIRE(static_cast<int>(scores.size()) == 3);
    for (int j = 0; j < 3; ++j)
      CHECK(scores[j] == doctest::Approx(r_speech(0, j + 1)).epsilon(1e-9));

    const auto r_sent = oracle_relevancy(pass.sentences[1].trace);
    const auto fs = relevancy::frame_scores_from_trace(pass.sentences[1].trace, 9,
                                                       cfg.frame_width);
    // 9 valid frames -> 5 tokens, last straddling; expect frames 0..8
    REQUIRE(fs.frames.size() == 9);
    std::vector<double> raw;
    for (int f : fs.frames) raw.push_back(r_sent(0, f / cfg.frame_width + 1));
    const double mn = *std::min_element(raw.begin(), raw.end());
    const double mx = *std::max_element(raw.begin(), raw.end());
    for (size_t i = 0; i < raw.size(); ++i)
      CHECK(fs.scores[i] == doctest::Approx((raw[i] - mn) / (mx - mn)).epsilon(1e-9));
  }
}

TEST_CASE("single-layer relevancy equals the cls row of the weighted attention") {
  const auto trace = random_trace(1, 3, 5, 13);
  const auto abar = relevancy::weighted_attention(trace.attn[0], trace.grad_attn[0]);
  const auto scores = relevancy::cls_row_scores(trace);
  for (int j = 1; j < 5; ++j) CHECK(scores[j - 1] == doctest::Approx(abar(0, j)).epsilon(1e-12));
}

TEST_CASE("relevancy map invariants on random traces") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto trace = random_trace(3, 2, 6, seed);
    for (size_t l = 0; l < trace.attn.size(); ++l) {
      const auto abar = relevancy::weighted_attention(trace.attn[l], trace.grad_attn[l]);
      for (double v : abar.v) CHECK(v >= 0.0);
    }
    const auto r = relevancy::relevancy_map(trace);
    for (int i = 0; i < r.rows; ++i) CHECK(r(i, i) >= 1.0 - 1e-12);
    for (double v : r.v) CHECK(v >= 0.0);
  }
}

TEST_CASE("frame score mapping") {
  SUBCASE("token scores fan out to both frames, min-max normalized") {
    BlockTrace<double> trace;
    trace.attn.resize(1);
    trace.grad_attn.resize(1);
    trace.token_valid.assign(4, 1);  // cls + 3 tokens
    Mat<double> a(4, 4), g(4, 4);
    std::fill(a.v.begin(), a.v.end(), 0.25);
    g.set_zero();
    // cls row of Abar becomes [*, 1, 3, 5]
    g(0, 1) = 4.0;
    g(0, 2) = 12.0;
    g(0, 3) = 20.0;
    trace.attn[0].push_back(a);
    trace.grad_attn[0].push_back(g);
    const auto fs = relevancy::frame_scores_from_trace(trace, 6, 2);
    REQUIRE(fs.frames == std::vector<int>{0, 1, 2, 3, 4, 5});
    CHECK_FALSE(fs.degenerate);
    const std::vector<double> want{0.0, 0.0, 0.5, 0.5, 1.0, 1.0};
    for (size_t i = 0; i < want.size(); ++i)
      CHECK(fs.scores[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
  SUBCASE("constant scores are degenerate and map to zero") {
    BlockTrace<double> trace;
    trace.attn.resize(1);
    trace.grad_attn.resize(1);
    trace.token_valid.assign(3, 1);
    Mat<double> a(3, 3), g(3, 3);
    std::fill(a.v.begin(), a.v.end(), 1.0 / 3.0);
    std::fill(g.v.begin(), g.v.end(), 3.0);
    trace.attn[0].push_back(a);
    trace.grad_attn[0].push_back(g);
    const auto fs = relevancy::frame_scores_from_trace(trace, 4, 2);
    CHECK(fs.degenerate);
    for (double s : fs.scores) CHECK(s == 0.0);
  }
  SUBCASE("masked tokens and padding frames are excluded") {
    BlockTrace<double> trace;
    trace.attn.resize(1);
    trace.grad_attn.resize(1);
    trace.token_valid = {1, 1, 0, 1};  // token 1 masked (frames 2,3)
    Mat<double> a(4, 4), g(4, 4);
    std::fill(a.v.begin(), a.v.end(), 0.25);
    g(0, 1) = 4.0;
    g(0, 2) = 12.0;
    g(0, 3) = 20.0;
    trace.attn[0].push_back(a);
    trace.grad_attn[0].push_back(g);
    const auto fs = relevancy::frame_scores_from_trace(trace, 5, 2);  // frame 5 is padding
    CHECK(fs.frames == std::vector<int>{0, 1, 4});
  }
}

TEST_CASE("interpret end to end on a random net") {
  ModelConfig cfg = tiny_config(81);
  Net<float> net(cfg);
  dsp::DspConfig dcfg;  // span geometry only
  std::mt19937_64 rng(82);
  std::vector<dsp::MelSpectrogram> specs;
  for (int i = 0; i < 4; ++i)
    specs.push_back(make_spec(cfg.n_mels, cfg.target_frames, 10 + i, rng, cfg.pad_value));
  std::vector<const dsp::MelSpectrogram*> ptrs;
  for (auto& s : specs) ptrs.push_back(&s);

  SUBCASE("tau above one selects nothing") {
    const auto r = relevancy::interpret(net, ptrs, 3, 1.01, 1, dcfg);
    for (const auto& si : r.per_sentence) {
      CHECK(si.relevant_frames.empty());
      CHECK(si.spans.empty());
    }
  }
  SUBCASE("tau zero selects everything except the minima") {
    const auto r = relevancy::interpret(net, ptrs, 3, 0.0, 1, dcfg);
    for (const auto& si : r.per_sentence) {
      if (si.degenerate_minmax) continue;
      int minima = 0;
      for (double s : si.frame_scores) minima += s == 0.0;
      CHECK(si.relevant_frames.size() == si.frame_scores.size() - minima);
      CHECK(minima >= 1);
    }
  }
  SUBCASE("top sentences sorted by score, ties by index") {
    const auto r = relevancy::interpret(net, ptrs, 4, 0.3, 1, dcfg);
    REQUIRE(r.top_sentences.size() == 4);
    for (size_t i = 1; i < r.top_sentences.size(); ++i) {
      const double prev = r.sentence_scores[r.top_sentences[i - 1]];
      const double cur = r.sentence_scores[r.top_sentences[i]];
      CHECK((prev > cur || (prev == cur && r.top_sentences[i - 1] < r.top_sentences[i])));
    }
  }
  SUBCASE("k larger than the speech is noted") {
    const auto r = relevancy::interpret(net, ptrs, 9, 0.3, 1, dcfg);
    CHECK(r.k_truncated);
    CHECK(r.top_sentences.size() == 4);
  }
  SUBCASE("deterministic") {
    const auto a = relevancy::interpret(net, ptrs, 3, 0.3, std::nullopt, dcfg);
    const auto b = relevancy::interpret(net, ptrs, 3, 0.3, std::nullopt, dcfg);
    CHECK(a.target_class == b.target_class);
    CHECK(a.sentence_scores == b.sentence_scores);
    CHECK(a.top_sentences == b.top_sentences);
  }
  SUBCASE("frame scores are invariant to padding contents") {
    auto mutated = specs;
    std::normal_distribution<float> junk(0.0f, 50.0f);
    for (auto& spec : mutated)
      for (int m = 0; m < spec.n_mels; ++m)
        for (int t = spec.valid_frames; t < spec.n_frames; ++t) spec.at(m, t) = junk(rng);
    std::vector<const dsp::MelSpectrogram*> mptr;
    for (auto& s : mutated) mptr.push_back(&s);
    const auto a = relevancy::interpret(net, ptrs, 4, 0.3, 1, dcfg);
    const auto b = relevancy::interpret(net, mptr, 4, 0.3, 1, dcfg);
    CHECK(a.sentence_scores == b.sentence_scores);
    for (size_t i = 0; i < a.per_sentence.size(); ++i)
      CHECK(a.per_sentence[i].frame_scores == b.per_sentence[i].frame_scores);
  }
}

TEST_CASE("all-equal sentences get near-uniform relevancy") {
  ModelConfig cfg = tiny_config(91);
  Net<float> net(cfg);
  std::mt19937_64 rng(92);
  auto spec = make_spec(cfg.n_mels, cfg.target_frames, cfg.target_frames, rng, cfg.pad_value);
  std::vector<const dsp::MelSpectrogram*> ptrs(4, &spec);
  dsp::DspConfig dcfg;
  const auto r = relevancy::interpret(net, ptrs, 4, 0.3, 1, dcfg);
  const double mn = *std::min_element(r.sentence_scores.begin(), r.sentence_scores.end());
  const double mx = *std::max_element(r.sentence_scores.begin(), r.sentence_scores.end());
  CHECK(mx - mn < 1e-3);
}
