#include "sdd/synthcorpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sdd/common.hpp"
#include "sdd/wav.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace sdd::synth {

double CorpusManifest::prevalence() const {
  if (speakers.empty()) return 0.0;
  int dep = 0;
  for (const auto& s : speakers) dep += s.label;
  return static_cast<double>(dep) / static_cast<double>(speakers.size());
}

dsp::Waveform synth_sentence(const SpeakerProfile& profile, bool marked, double duration_s,
                             const SynthConfig& cfg, std::mt19937_64& rng) {
  if (duration_s < 0.5 || duration_s > 10.0)
    throw std::invalid_argument("synth_sentence: duration_s must be in [0.5, 10]");
  const int sr = cfg.sample_rate;
  const int n = static_cast<int>(std::lround(duration_s * sr));

  // F0 contour: AR(1) walk around the base, sampled every 50 ms and
  // linearly interpolated. Walk capped at +-2.5% so the mean pitch stays
  // near base_f0.
  const int ctrl_step = sr / 20;
  const int n_ctrl = n / ctrl_step + 2;
  std::normal_distribution<double> walk_noise(0.0, 0.008);
  std::vector<double> walk(n_ctrl);
  double w = 0.0;
  for (int i = 0; i < n_ctrl; ++i) {
    w = std::clamp(0.96 * w + walk_noise(rng), -0.025, 0.025);
    walk[i] = w;
  }

  constexpr int kHarmonics = 8;
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  double phase[kHarmonics];
  for (int h = 0; h < kHarmonics; ++h) phase[h] = phase_dist(rng);

  const double f0_scale = marked ? cfg.marker_f0_ratio : 1.0;
  std::vector<double> sig(n);
  double acc = 0.0;  // fundamental phase in cycles
  for (int t = 0; t < n; ++t) {
    const int c = t / ctrl_step;
    const double frac = static_cast<double>(t - c * ctrl_step) / ctrl_step;
    const double drift = walk[c] + frac * (walk[c + 1] - walk[c]);
    const double f0 = profile.base_f0 * f0_scale * (1.0 + drift);
    acc += f0 / sr;
    double s = 0.0;
    for (int h = 0; h < kHarmonics; ++h) {
      s += std::sin(2.0 * std::numbers::pi * (h + 1) * acc + phase[h]) / (h + 1);
    }
    sig[t] = s;
  }

  // Scale the harmonic part to the loudness target, then add noise at a
  // fixed level relative to it so the marked/unmarked RMS ratio is exact.
  double ss = 0.0;
  for (double s : sig) ss += s * s;
  const double rms = std::sqrt(ss / n);
  const double target_db = profile.base_loudness_db - (marked ? cfg.marker_db_drop : 0.0);
  const double target_rms = std::pow(10.0, target_db / 20.0);
  const double gain = rms > 0.0 ? target_rms / rms : 0.0;

  const double noise_sigma = target_rms * std::pow(10.0, cfg.noise_db_rel / 20.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  const int fade = std::min(n / 4, (sr * 30) / 1000);  // 30 ms raised cosine
  dsp::Waveform out;
  out.sample_rate = sr;
  out.samples.resize(n);
  for (int t = 0; t < n; ++t) {
    double x = sig[t] * gain + noise(rng) * noise_sigma;
    if (t < fade)
      x *= 0.5 * (1.0 - std::cos(std::numbers::pi * t / fade));
    else if (t >= n - fade)
      x *= 0.5 * (1.0 - std::cos(std::numbers::pi * (n - 1 - t) / fade));
    out.samples[t] = static_cast<float>(std::clamp(x, -1.0, 1.0));
  }
  return out;
}

namespace {

std::string speaker_name(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "spk%04d", idx);
  return buf;
}

json config_to_json(const SynthConfig& c) {
  return json{{"n_speakers", c.n_speakers},
              {"prevalence", c.prevalence},
              {"sentences_per_speaker", c.sentences_per_speaker},
              {"marker_density", c.marker_density},
              {"marker_f0_ratio", c.marker_f0_ratio},
              {"marker_db_drop", c.marker_db_drop},
              {"duration_min_s", c.duration_min_s},
              {"duration_max_s", c.duration_max_s},
              {"f0_low_hz", c.f0_low_hz},
              {"f0_high_hz", c.f0_high_hz},
              {"covariate_f0_shift_hz", c.covariate_f0_shift_hz},
              {"loudness_low_db", c.loudness_low_db},
              {"loudness_high_db", c.loudness_high_db},
              {"noise_db_rel", c.noise_db_rel},
              {"split_ratio", c.split_ratio},
              {"sample_rate", c.sample_rate}};
}

SynthConfig config_from_json(const json& j) {
  SynthConfig c;
  c.n_speakers = j.at("n_speakers").get<int>();
  c.prevalence = j.at("prevalence").get<double>();
  c.sentences_per_speaker = j.at("sentences_per_speaker").get<int>();
  c.marker_density = j.at("marker_density").get<double>();
  c.marker_f0_ratio = j.at("marker_f0_ratio").get<double>();
  c.marker_db_drop = j.at("marker_db_drop").get<double>();
  c.duration_min_s = j.at("duration_min_s").get<double>();
  c.duration_max_s = j.at("duration_max_s").get<double>();
  c.f0_low_hz = j.at("f0_low_hz").get<double>();
  c.f0_high_hz = j.at("f0_high_hz").get<double>();
  c.covariate_f0_shift_hz = j.at("covariate_f0_shift_hz").get<double>();
  c.loudness_low_db = j.at("loudness_low_db").get<double>();
  c.loudness_high_db = j.at("loudness_high_db").get<double>();
  c.noise_db_rel = j.at("noise_db_rel").get<double>();
  c.split_ratio = j.at("split_ratio").get<double>();
  c.sample_rate = j.at("sample_rate").get<int>();
  return c;
}

}  // namespace

CorpusManifest generate_corpus(const SynthConfig& cfg, uint64_t seed,
                               const std::string& out_dir) {
  if (cfg.n_speakers < 1) throw std::invalid_argument("generate_corpus: n_speakers must be >= 1");
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "wav", ec);
  if (ec) throw std::runtime_error("cannot create corpus directory: " + (root / "wav").string());

  // Corpus-level assignments: label shuffle and covariates.
  auto corpus_rng = stream_rng(seed, 0xC0DEULL);
  std::vector<int> order(cfg.n_speakers);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), corpus_rng);
  const int n_dep = static_cast<int>(std::lround(cfg.prevalence * cfg.n_speakers));
  std::vector<int> label(cfg.n_speakers, 0);
  for (int i = 0; i < n_dep && i < cfg.n_speakers; ++i) label[order[i]] = 1;
  std::vector<int> covariate(cfg.n_speakers);
  std::bernoulli_distribution half(0.5);
  for (int i = 0; i < cfg.n_speakers; ++i) covariate[i] = half(corpus_rng) ? 1 : 0;

  CorpusManifest manifest;
  manifest.seed = seed;
  manifest.config = cfg;
  manifest.speakers.resize(cfg.n_speakers);

  for (int i = 0; i < cfg.n_speakers; ++i) {
    auto rng = stream_rng(seed, static_cast<uint64_t>(i) + 1);

    SpeakerProfile profile;
    profile.speaker_id = speaker_name(i);
    profile.label = label[i];
    profile.covariate = covariate[i];
    std::uniform_real_distribution<double> f0_dist(cfg.f0_low_hz, cfg.f0_high_hz);
    profile.base_f0 = f0_dist(rng) + (covariate[i] ? cfg.covariate_f0_shift_hz : 0.0);
    std::uniform_real_distribution<double> loud_dist(cfg.loudness_low_db, cfg.loudness_high_db);
    profile.base_loudness_db = loud_dist(rng);
    profile.n_sentences = cfg.sentences_per_speaker;
    profile.marker_density = label[i] ? cfg.marker_density : 0.0;

    // Marked sentence positions: a fixed count per speaker, random placement.
    int n_marked = static_cast<int>(std::lround(profile.marker_density * profile.n_sentences));
    if (profile.marker_density > 0.0 && n_marked == 0) n_marked = 1;
    std::vector<int> sentence_order(profile.n_sentences);
    std::iota(sentence_order.begin(), sentence_order.end(), 0);
    std::shuffle(sentence_order.begin(), sentence_order.end(), rng);
    std::vector<char> marked(profile.n_sentences, 0);
    for (int k = 0; k < n_marked; ++k) marked[sentence_order[k]] = 1;

    SpeakerRecord rec;
    rec.speaker_id = profile.speaker_id;
    rec.label = profile.label;
    rec.covariate = profile.covariate;

    std::uniform_real_distribution<double> dur_dist(cfg.duration_min_s, cfg.duration_max_s);
    std::uniform_real_distribution<double> gap_dist(0.08, 0.3);
    int64_t cursor_ms = 0;
    for (int s = 0; s < profile.n_sentences; ++s) {
      const double dur = dur_dist(rng);
      const auto w = synth_sentence(profile, marked[s] != 0, dur, cfg, rng);

      char name[32];
      std::snprintf(name, sizeof name, "wav/%s_s%02d.wav", profile.speaker_id.c_str(), s);
      try {
        wav::write_wav16((root / name).string(), w);
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string("corpus write failed: ") + e.what());
      }

      SentenceMeta meta;
      meta.path = name;
      meta.start_ms = cursor_ms;
      meta.end_ms = cursor_ms + static_cast<int64_t>(std::lround(
                                    1000.0 * w.samples.size() / w.sample_rate));
      meta.marked = marked[s] != 0;
      cursor_ms = meta.end_ms + static_cast<int64_t>(std::lround(1000.0 * gap_dist(rng)));
      rec.sentences.push_back(std::move(meta));
    }
    manifest.speakers[i] = std::move(rec);
  }

  auto split_rng = stream_rng(seed, 0x5914ULL);
  split_corpus(manifest, cfg.split_ratio, split_rng);
  write_manifest((root / "manifest.jsonl").string(), manifest);
  return manifest;
}

void split_corpus(CorpusManifest& manifest, double ratio, std::mt19937_64& rng) {
  if (manifest.speakers.size() < 10)
    throw std::invalid_argument("split_corpus: need at least 10 speakers");

  int n_dep = 0;
  for (const auto& s : manifest.speakers) n_dep += s.label;
  if (n_dep == 0 || n_dep == static_cast<int>(manifest.speakers.size())) {
    manifest.degenerate_split = true;
    std::fprintf(stderr, "split_corpus: single-class corpus, split flagged degenerate\n");
  }

  // Strata on (label, covariate); strata with < 2 speakers are merged into
  // one pool.
  std::map<int, std::vector<size_t>> strata;
  for (size_t i = 0; i < manifest.speakers.size(); ++i) {
    const auto& s = manifest.speakers[i];
    strata[s.label * 2 + s.covariate].push_back(i);
  }
  std::vector<std::vector<size_t>> groups;
  std::vector<size_t> merged;
  for (auto& [key, idxs] : strata) {
    if (idxs.size() < 2) {
      std::fprintf(stderr, "split_corpus: stratum %d has %zu speaker(s), merging\n", key,
                   idxs.size());
      merged.insert(merged.end(), idxs.begin(), idxs.end());
    } else {
      groups.push_back(std::move(idxs));
    }
  }
  if (!merged.empty()) groups.push_back(std::move(merged));

  // Largest-remainder allocation so the overall train count is exact.
  const int total_train = static_cast<int>(
      std::lround(ratio * static_cast<double>(manifest.speakers.size())));
  std::vector<int> quota(groups.size());
  std::vector<std::pair<double, size_t>> remainders;
  int assigned = 0;
  for (size_t g = 0; g < groups.size(); ++g) {
    const double want = ratio * static_cast<double>(groups[g].size());
    quota[g] = static_cast<int>(std::floor(want));
    assigned += quota[g];
    remainders.emplace_back(-(want - quota[g]), g);
  }
  std::sort(remainders.begin(), remainders.end());
  for (size_t r = 0; r < remainders.size() && assigned < total_train; ++r) {
    quota[remainders[r].second]++;
    ++assigned;
  }

  for (size_t g = 0; g < groups.size(); ++g) {
    std::shuffle(groups[g].begin(), groups[g].end(), rng);
    for (size_t k = 0; k < groups[g].size(); ++k) {
      manifest.speakers[groups[g][k]].split =
          (static_cast<int>(k) < quota[g]) ? "train" : "dev";
    }
  }
}

std::string serialize_manifest(const CorpusManifest& m) {
  std::ostringstream out;
  json header{{"type", "header"},
              {"seed", m.seed},
              {"degenerate_split", m.degenerate_split},
              {"config", config_to_json(m.config)}};
  out << header.dump() << "\n";
  for (const auto& s : m.speakers) {
    json sentences = json::array();
    for (const auto& sent : s.sentences) {
      sentences.push_back(json{{"path", sent.path},
                               {"start_ms", sent.start_ms},
                               {"end_ms", sent.end_ms},
                               {"marked", sent.marked}});
    }
    json rec{{"speaker_id", s.speaker_id},
             {"label", s.label ? "depressed" : "normal"},
             {"covariate", s.covariate},
             {"split", s.split},
             {"sentences", sentences}};
    out << rec.dump() << "\n";
  }
  return out.str();
}

CorpusManifest parse_manifest(const std::string& jsonl) {
  CorpusManifest m;
  std::istringstream in(jsonl);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.value("type", "") == "header") {
      m.seed = j.at("seed").get<uint64_t>();
      m.degenerate_split = j.at("degenerate_split").get<bool>();
      m.config = config_from_json(j.at("config"));
      have_header = true;
      continue;
    }
    SpeakerRecord rec;
    rec.speaker_id = j.at("speaker_id").get<std::string>();
    const std::string label = j.at("label").get<std::string>();
    if (label != "depressed" && label != "normal")
      throw std::runtime_error("manifest: unknown label '" + label + "'");
    rec.label = label == "depressed" ? 1 : 0;
    rec.covariate = j.at("covariate").get<int>();
    rec.split = j.at("split").get<std::string>();
    for (const auto& sj : j.at("sentences")) {
      SentenceMeta meta;
      meta.path = sj.at("path").get<std::string>();
      meta.start_ms = sj.at("start_ms").get<int64_t>();
      meta.end_ms = sj.at("end_ms").get<int64_t>();
      meta.marked = sj.at("marked").get<bool>();
      rec.sentences.push_back(std::move(meta));
    }
    m.speakers.push_back(std::move(rec));
  }
  if (!have_header) throw std::runtime_error("manifest: missing header line");
  return m;
}

void write_manifest(const std::string& path, const CorpusManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << serialize_manifest(m);
  if (!out) throw std::runtime_error("short write: " + path);
}

CorpusManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read manifest: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

}  // namespace sdd::synth
