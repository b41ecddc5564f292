#include "sdd/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "sdd/common.hpp"

namespace sdd::cli {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct KeySpec {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Get, class Set>
KeySpec int_key(const std::string& name, Get get, Set set) {
  return {name,
          [set](RunConfig& c, const std::string& v) { set(c, std::stoi(v)); },
          [get](const RunConfig& c) { return std::to_string(get(c)); }};
}

template <class Get, class Set>
KeySpec dbl_key(const std::string& name, Get get, Set set) {
  return {name,
          [set](RunConfig& c, const std::string& v) { set(c, std::stod(v)); },
          [get](const RunConfig& c) { return fmt_double(get(c)); }};
}

template <class Get, class Set>
KeySpec bool_key(const std::string& name, Get get, Set set) {
  return {name,
          [set, name](RunConfig& c, const std::string& v) {
            if (v == "1" || v == "true")
              set(c, true);
            else if (v == "0" || v == "false")
              set(c, false);
            else
              throw std::invalid_argument("config: bad boolean for " + name + ": " + v);
          },
          [get](const RunConfig& c) { return get(c) ? std::string("1") : std::string("0"); }};
}

#define GET(expr) [](const RunConfig& c) { return c.expr; }
#define SET(expr) [](RunConfig& c, auto v) { c.expr = v; }

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      int_key("synth.n_speakers", GET(synth.n_speakers), SET(synth.n_speakers)),
      dbl_key("synth.prevalence", GET(synth.prevalence), SET(synth.prevalence)),
      int_key("synth.sentences_per_speaker", GET(synth.sentences_per_speaker),
              SET(synth.sentences_per_speaker)),
      dbl_key("synth.marker_density", GET(synth.marker_density), SET(synth.marker_density)),
      dbl_key("synth.marker_f0_ratio", GET(synth.marker_f0_ratio), SET(synth.marker_f0_ratio)),
      dbl_key("synth.marker_db_drop", GET(synth.marker_db_drop), SET(synth.marker_db_drop)),
      dbl_key("synth.duration_min_s", GET(synth.duration_min_s), SET(synth.duration_min_s)),
      dbl_key("synth.duration_max_s", GET(synth.duration_max_s), SET(synth.duration_max_s)),
      dbl_key("synth.f0_low_hz", GET(synth.f0_low_hz), SET(synth.f0_low_hz)),
      dbl_key("synth.f0_high_hz", GET(synth.f0_high_hz), SET(synth.f0_high_hz)),
      dbl_key("synth.covariate_f0_shift_hz", GET(synth.covariate_f0_shift_hz),
              SET(synth.covariate_f0_shift_hz)),
      dbl_key("synth.loudness_low_db", GET(synth.loudness_low_db), SET(synth.loudness_low_db)),
      dbl_key("synth.loudness_high_db", GET(synth.loudness_high_db),
              SET(synth.loudness_high_db)),
      dbl_key("synth.noise_db_rel", GET(synth.noise_db_rel), SET(synth.noise_db_rel)),
      dbl_key("synth.split_ratio", GET(synth.split_ratio), SET(synth.split_ratio)),
      int_key("dsp.sample_rate", GET(dsp.sample_rate), SET(dsp.sample_rate)),
      int_key("dsp.win_length", GET(dsp.win_length), SET(dsp.win_length)),
      int_key("dsp.hop_length", GET(dsp.hop_length), SET(dsp.hop_length)),
      int_key("dsp.n_fft", GET(dsp.n_fft), SET(dsp.n_fft)),
      int_key("dsp.n_mels", GET(dsp.n_mels), SET(dsp.n_mels)),
      dbl_key("dsp.fmin", GET(dsp.fmin), SET(dsp.fmin)),
      dbl_key("dsp.fmax", GET(dsp.fmax), SET(dsp.fmax)),
      dbl_key("dsp.log_floor", GET(dsp.log_floor), SET(dsp.log_floor)),
      int_key("dsp.target_frames", GET(dsp.target_frames), SET(dsp.target_frames)),
      bool_key("dsp.standardize", GET(dsp.standardize), SET(dsp.standardize)),
      dbl_key("dsp.norm_mean", GET(dsp.norm_mean), SET(dsp.norm_mean)),
      dbl_key("dsp.norm_std", GET(dsp.norm_std), SET(dsp.norm_std)),
      int_key("model.d_model", GET(model.d_model), SET(model.d_model)),
      int_key("model.n_heads", GET(model.n_heads), SET(model.n_heads)),
      int_key("model.sentence_layers", GET(model.sentence_layers), SET(model.sentence_layers)),
      int_key("model.speech_layers", GET(model.speech_layers), SET(model.speech_layers)),
      int_key("model.frame_width", GET(model.frame_width), SET(model.frame_width)),
      int_key("model.max_sentences", GET(model.max_sentences), SET(model.max_sentences)),
      dbl_key("model.dropout", GET(model.dropout), SET(model.dropout)),
      int_key("model.freeze_prefix_layers", GET(model.freeze_prefix_layers),
              SET(model.freeze_prefix_layers)),
      dbl_key("model.init_std", GET(model.init_std), SET(model.init_std)),
      dbl_key("train.lr", GET(train.lr), SET(train.lr)),
      dbl_key("train.weight_decay", GET(train.weight_decay), SET(train.weight_decay)),
      int_key("train.grad_accum", GET(train.grad_accum), SET(train.grad_accum)),
      int_key("train.max_epochs", GET(train.max_epochs), SET(train.max_epochs)),
      int_key("train.patience", GET(train.patience), SET(train.patience)),
      int_key("interpret.k", GET(interpret_k), SET(interpret_k)),
      dbl_key("interpret.tau", GET(interpret_tau), SET(interpret_tau)),
      int_key("perturb.sentence_step", GET(perturb_sentence_step), SET(perturb_sentence_step)),
      dbl_key("perturb.random_frame_fraction", GET(perturb_random_frame_fraction),
              SET(perturb_random_frame_fraction)),
      int_key("perturb.n_seeds", GET(perturb_n_seeds), SET(perturb_n_seeds)),
      int_key("eval.n_boot", GET(eval_n_boot), SET(eval_n_boot)),
      dbl_key("eval.alpha", GET(eval_alpha), SET(eval_alpha)),
      int_key("features.bonferroni_m", GET(bonferroni_m), SET(bonferroni_m)),
  };
  return table;
}

#undef GET
#undef SET

}  // namespace

RunConfig make_preset(const std::string& preset) {
  RunConfig cfg;
  if (preset == "toy" || preset.empty()) {
    // defaults
  } else if (preset == "paper-scale") {
    cfg.dsp.target_frames = 1024;
    cfg.model.target_frames = 1024;
    cfg.model.sentence_layers = 12;
    cfg.model.speech_layers = 6;
    cfg.model.max_sentences = 42;
    cfg.synth.sentences_per_speaker = 42;
    cfg.train.grad_accum = 72;
    cfg.train.lr = 3e-5;
    cfg.perturb_sentence_step = 10;
  } else {
    throw std::invalid_argument("unknown preset: " + preset);
  }
  finalize(cfg);
  return cfg;
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& spec : key_table()) {
    if (spec.name == key) {
      spec.set(cfg, value);
      return;
    }
  }
  throw std::invalid_argument("unknown config key: " + key);
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
}

void finalize(RunConfig& cfg) {
  cfg.synth.sample_rate = cfg.dsp.sample_rate;
  cfg.model.n_mels = cfg.dsp.n_mels;
  cfg.model.target_frames = cfg.dsp.target_frames;
  cfg.model.pad_value = cfg.dsp.pad_value();
  cfg.model.seed = cfg.seed;
  cfg.dsp.validate();
  cfg.model.validate();
  if (cfg.train.grad_accum < 1) throw std::invalid_argument("train.grad_accum must be >= 1");
  if (cfg.train.max_epochs < 1) throw std::invalid_argument("train.max_epochs must be >= 1");
  if (cfg.interpret_k < 1) throw std::invalid_argument("interpret.k must be >= 1");
}

std::vector<std::pair<std::string, std::string>> config_items(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> items;
  for (const auto& spec : key_table()) items.emplace_back(spec.name, spec.get(cfg));
  return items;
}

std::string serialize(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& [k, v] : config_items(cfg)) out << k << " = " << v << "\n";
  return out.str();
}

std::string config_hash_hex(const RunConfig& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(serialize(cfg))));
  return buf;
}

}  // namespace sdd::cli
