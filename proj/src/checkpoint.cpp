#include "sdd/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace sdd::model {

namespace {

constexpr char kMagic[8] = {'S', 'D', 'D', 'C', 'K', 'P', 'T', '1'};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) { return std::stod(s); }

}  // namespace

std::map<std::string, std::string> model_config_to_kv(const ModelConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["model.d_model"] = std::to_string(cfg.d_model);
  kv["model.n_heads"] = std::to_string(cfg.n_heads);
  kv["model.sentence_layers"] = std::to_string(cfg.sentence_layers);
  kv["model.speech_layers"] = std::to_string(cfg.speech_layers);
  kv["model.frame_width"] = std::to_string(cfg.frame_width);
  kv["model.n_mels"] = std::to_string(cfg.n_mels);
  kv["model.target_frames"] = std::to_string(cfg.target_frames);
  kv["model.max_sentences"] = std::to_string(cfg.max_sentences);
  kv["model.dropout"] = fmt_double(cfg.dropout);
  kv["model.freeze_prefix_layers"] = std::to_string(cfg.freeze_prefix_layers);
  kv["model.init_std"] = fmt_double(cfg.init_std);
  kv["model.pad_value"] = fmt_double(cfg.pad_value);
  kv["model.seed"] = std::to_string(cfg.seed);
  kv["model.variant"] = cfg.variant;
  return kv;
}

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg;
  cfg.d_model = std::stoi(kv.at("model.d_model"));
  cfg.n_heads = std::stoi(kv.at("model.n_heads"));
  cfg.sentence_layers = std::stoi(kv.at("model.sentence_layers"));
  cfg.speech_layers = std::stoi(kv.at("model.speech_layers"));
  cfg.frame_width = std::stoi(kv.at("model.frame_width"));
  cfg.n_mels = std::stoi(kv.at("model.n_mels"));
  cfg.target_frames = std::stoi(kv.at("model.target_frames"));
  cfg.max_sentences = std::stoi(kv.at("model.max_sentences"));
  cfg.dropout = parse_double(kv.at("model.dropout"));
  cfg.freeze_prefix_layers = std::stoi(kv.at("model.freeze_prefix_layers"));
  cfg.init_std = parse_double(kv.at("model.init_std"));
  cfg.pad_value = parse_double(kv.at("model.pad_value"));
  cfg.seed = std::stoull(kv.at("model.seed"));
  cfg.variant = kv.at("model.variant");
  return cfg;
}

std::map<std::string, std::string> dsp_config_to_kv(const dsp::DspConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["dsp.sample_rate"] = std::to_string(cfg.sample_rate);
  kv["dsp.win_length"] = std::to_string(cfg.win_length);
  kv["dsp.hop_length"] = std::to_string(cfg.hop_length);
  kv["dsp.n_fft"] = std::to_string(cfg.n_fft);
  kv["dsp.n_mels"] = std::to_string(cfg.n_mels);
  kv["dsp.fmin"] = fmt_double(cfg.fmin);
  kv["dsp.fmax"] = fmt_double(cfg.fmax);
  kv["dsp.log_floor"] = fmt_double(cfg.log_floor);
  kv["dsp.target_frames"] = std::to_string(cfg.target_frames);
  kv["dsp.standardize"] = cfg.standardize ? "1" : "0";
  kv["dsp.norm_mean"] = fmt_double(cfg.norm_mean);
  kv["dsp.norm_std"] = fmt_double(cfg.norm_std);
  return kv;
}

dsp::DspConfig dsp_config_from_kv(const std::map<std::string, std::string>& kv) {
  dsp::DspConfig cfg;
  cfg.sample_rate = std::stoi(kv.at("dsp.sample_rate"));
  cfg.win_length = std::stoi(kv.at("dsp.win_length"));
  cfg.hop_length = std::stoi(kv.at("dsp.hop_length"));
  cfg.n_fft = std::stoi(kv.at("dsp.n_fft"));
  cfg.n_mels = std::stoi(kv.at("dsp.n_mels"));
  cfg.fmin = parse_double(kv.at("dsp.fmin"));
  cfg.fmax = parse_double(kv.at("dsp.fmax"));
  cfg.log_floor = parse_double(kv.at("dsp.log_floor"));
  cfg.target_frames = std::stoi(kv.at("dsp.target_frames"));
  cfg.standardize = kv.at("dsp.standardize") == "1";
  cfg.norm_mean = parse_double(kv.at("dsp.norm_mean"));
  cfg.norm_std = parse_double(kv.at("dsp.norm_std"));
  return cfg;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, Params<float>& params,
                     const std::map<std::string, std::string>& meta) {
  std::map<std::string, std::string> kv = model_config_to_kv(cfg);
  for (const auto& [k, v] : meta) kv[k] = v;

  std::ostringstream header;
  for (const auto& [k, v] : kv) header << k << "=" << v << "\n";
  const std::string hdr = header.str();

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  bool ok = std::fwrite(kMagic, 1, 8, f) == 8;
  const uint32_t version = 1;
  ok = ok && std::fwrite(&version, 4, 1, f) == 1;
  const uint64_t hdr_len = hdr.size();
  ok = ok && std::fwrite(&hdr_len, 8, 1, f) == 1;
  ok = ok && std::fwrite(hdr.data(), 1, hdr.size(), f) == hdr.size();

  auto tensors = params.tensors();
  const uint32_t n_tensors = static_cast<uint32_t>(tensors.size());
  ok = ok && std::fwrite(&n_tensors, 4, 1, f) == 1;
  for (auto& t : tensors) {
    const uint32_t name_len = static_cast<uint32_t>(t.name.size());
    ok = ok && std::fwrite(&name_len, 4, 1, f) == 1;
    ok = ok && std::fwrite(t.name.data(), 1, name_len, f) == name_len;
    const uint32_t ndim = 2;
    ok = ok && std::fwrite(&ndim, 4, 1, f) == 1;
    const uint64_t dims[2] = {static_cast<uint64_t>(t.mat->rows),
                              static_cast<uint64_t>(t.mat->cols)};
    ok = ok && std::fwrite(dims, 8, 2, f) == 2;
    ok = ok && std::fwrite(t.mat->data(), 4, t.mat->size(), f) == t.mat->size();
  }
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);

  auto fail = [&](const char* what) {
    std::fclose(f);
    throw std::runtime_error(std::string(what) + ": " + path);
  };

  char magic[8];
  uint32_t version = 0;
  uint64_t hdr_len = 0;
  if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kMagic, 8) != 0) fail("bad magic");
  if (std::fread(&version, 4, 1, f) != 1 || version != 1) fail("unsupported version");
  if (std::fread(&hdr_len, 8, 1, f) != 1) fail("bad header");
  std::string hdr(hdr_len, '\0');
  if (std::fread(hdr.data(), 1, hdr_len, f) != hdr_len) fail("bad header");

  Checkpoint ckpt;
  std::istringstream lines(hdr);
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  ckpt.config = model_config_from_kv(ckpt.meta);
  ckpt.params = Net<float>::shaped_params(ckpt.config);

  uint32_t n_tensors = 0;
  if (std::fread(&n_tensors, 4, 1, f) != 1) fail("bad tensor count");
  auto tensors = ckpt.params.tensors();
  if (n_tensors != tensors.size()) fail("tensor count mismatch");
  for (auto& t : tensors) {
    uint32_t name_len = 0;
    if (std::fread(&name_len, 4, 1, f) != 1) fail("bad tensor name");
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, f) != name_len) fail("bad tensor name");
    if (name != t.name) fail("tensor order mismatch");
    uint32_t ndim = 0;
    uint64_t dims[2];
    if (std::fread(&ndim, 4, 1, f) != 1 || ndim != 2 || std::fread(dims, 8, 2, f) != 2)
      fail("bad tensor dims");
    if (dims[0] != static_cast<uint64_t>(t.mat->rows) ||
        dims[1] != static_cast<uint64_t>(t.mat->cols))
      fail("tensor shape mismatch");
    if (std::fread(t.mat->data(), 4, t.mat->size(), f) != t.mat->size()) fail("bad tensor data");
  }
  std::fclose(f);
  return ckpt;
}

}  // namespace sdd::model
