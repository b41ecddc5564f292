#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "sdd/acoustics.hpp"
#include "sdd/dsp.hpp"

using namespace sdd;
using acoustics::SampleSpan;

namespace {

dsp::Waveform tone(double freq_hz, double amplitude, double seconds, int sr = 16000) {
  dsp::Waveform w;
  w.sample_rate = sr;
  const int n = static_cast<int>(seconds * sr);
  w.samples.resize(n);
  for (int i = 0; i < n; ++i)
    w.samples[i] =
        static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * i / sr));
  return w;
}

}  // namespace

TEST_CASE("merge_spans") {
  dsp::DspConfig cfg;
  SUBCASE("adjacent frames union into one span") {
    const auto spans = acoustics::merge_spans({0, 1}, 48, cfg);
    REQUIRE(spans.size() == 1);
    CHECK(spans[0] == SampleSpan{0, 560});  // hop 160 + win 400
  }
  SUBCASE("distant frames stay disjoint") {
    const auto spans = acoustics::merge_spans({0, 100}, 128, cfg);
    REQUIRE(spans.size() == 2);
    CHECK(spans[0] == SampleSpan{0, 400});
    CHECK(spans[1] == SampleSpan{16000, 16400});
  }
  SUBCASE("empty input") { CHECK(acoustics::merge_spans({}, 48, cfg).empty()); }
  SUBCASE("output disjoint, sorted, length bounded") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> frame(0, 127);
    for (int t = 0; t < 50; ++t) {
      std::vector<int> frames;
      for (int i = 0; i < 30; ++i) frames.push_back(frame(rng));
      const auto spans = acoustics::merge_spans(frames, 128, cfg);
      int64_t total = 0;
      for (size_t i = 0; i < spans.size(); ++i) {
        CHECK(spans[i].end > spans[i].begin);
        if (i > 0) CHECK(spans[i].begin > spans[i - 1].end);
        total += spans[i].length();
      }
      CHECK(total <= static_cast<int64_t>(frames.size()) * cfg.win_length);
    }
  }
}

TEST_CASE("rms loudness") {
  SUBCASE("full-scale sine is about -3.01 dB") {
    const auto w = tone(100.0, 1.0, 0.16);  // whole number of periods
    const double db = acoustics::rms_loudness_db(w, {0, static_cast<int64_t>(w.samples.size())});
    CHECK(db == doctest::Approx(-3.0103).epsilon(1e-3));
  }
  SUBCASE("silence floors at -120 dB") {
    dsp::Waveform w;
    w.samples.assign(1600, 0.0f);
    CHECK(acoustics::rms_loudness_db(w, {0, 1600}) == doctest::Approx(-120.0));
  }
  SUBCASE("halving amplitude drops exactly 6.02 dB") {
    const auto w1 = tone(250.0, 0.5, 0.2);
    const auto w2 = tone(250.0, 0.25, 0.2);
    const SampleSpan span{0, static_cast<int64_t>(w1.samples.size())};
    CHECK(acoustics::rms_loudness_db(w1, span) - acoustics::rms_loudness_db(w2, span) ==
          doctest::Approx(6.0206).epsilon(1e-6));
  }
  SUBCASE("scale equivariance") {
    std::mt19937_64 rng(8);
    std::normal_distribution<float> d(0.0f, 0.05f);
    dsp::Waveform w;
    w.samples.resize(4000);
    for (auto& s : w.samples) s = d(rng);
    dsp::Waveform w3 = w;
    for (auto& s : w3.samples) s *= 3.0f;
    const SampleSpan span{100, 3900};
    CHECK(acoustics::rms_loudness_db(w3, span) - acoustics::rms_loudness_db(w, span) ==
          doctest::Approx(20.0 * std::log10(3.0)).epsilon(1e-4));
  }
  SUBCASE("empty span rejected") {
    const auto w = tone(100.0, 0.5, 0.1);
    CHECK_THROWS_AS(acoustics::rms_loudness_db(w, {10, 10}), std::invalid_argument);
  }
}

TEST_CASE("f0 autocorrelation") {
  SUBCASE("pure 200 Hz tone") {
    const auto w = tone(200.0, 0.5, 0.5);
    const auto est = acoustics::f0_autocorr(w, {0, static_cast<int64_t>(w.samples.size())});
    REQUIRE(est.voiced);
    CHECK(est.f0_hz == doctest::Approx(200.0).epsilon(0.005));
  }
  SUBCASE("white noise is unvoiced") {
    int voiced = 0;
    for (int seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      std::normal_distribution<float> d(0.0f, 0.2f);
      dsp::Waveform w;
      w.sample_rate = 16000;
      w.samples.resize(8000);
      for (auto& s : w.samples) s = d(rng);
      if (acoustics::f0_autocorr(w, {0, 8000}).voiced) ++voiced;
    }
    CHECK(voiced == 0);
  }
  SUBCASE("strong second harmonic does not halve the period") {
    dsp::Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(8000);
    for (int i = 0; i < 8000; ++i) {
      const double t = static_cast<double>(i) / 16000.0;
      w.samples[i] = static_cast<float>(0.4 * std::sin(2 * std::numbers::pi * 200.0 * t) +
                                        0.32 * std::sin(2 * std::numbers::pi * 400.0 * t));
    }
    const auto est = acoustics::f0_autocorr(w, {0, 8000});
    REQUIRE(est.voiced);
    CHECK(est.f0_hz == doctest::Approx(200.0).epsilon(0.01));
  }
  SUBCASE("sweep 60..380 Hz errs under 1%") {
    for (double f = 60.0; f <= 380.0; f += 20.0) {
      const auto w = tone(f, 0.5, 0.4);
      const auto est = acoustics::f0_autocorr(w, {0, static_cast<int64_t>(w.samples.size())});
      REQUIRE(est.voiced);
      CHECK(std::abs(est.f0_hz - f) / f < 0.01);
    }
  }
  SUBCASE("short span rejected") {
    const auto w = tone(100.0, 0.5, 0.2);
    CHECK_THROWS_AS(acoustics::f0_autocorr(w, {0, 600}), std::invalid_argument);  // < 40 ms
  }
}

TEST_CASE("spectral centroid and zcr behave sanely") {
  dsp::DspConfig cfg;
  const auto low = tone(300.0, 0.5, 0.3);
  const auto high = tone(3000.0, 0.5, 0.3);
  const SampleSpan span{0, 4800};
  const double c_low = acoustics::spectral_centroid_hz(low, span, cfg);
  const double c_high = acoustics::spectral_centroid_hz(high, span, cfg);
  CHECK(c_low == doctest::Approx(300.0).epsilon(0.1));
  CHECK(c_high == doctest::Approx(3000.0).epsilon(0.1));
  CHECK(c_low < c_high);

  // A sine at f crosses zero 2f times per second.
  CHECK(acoustics::zero_crossing_rate(low, span) == doctest::Approx(600.0).epsilon(0.02));
  CHECK(acoustics::zero_crossing_rate(high, span) == doctest::Approx(6000.0).epsilon(0.02));
}
