#pragma once

#include <map>
#include <string>

#include "sdd/dsp.hpp"
#include "sdd/model.hpp"

namespace sdd::model {

struct Checkpoint {
  ModelConfig config;
  Params<float> params;
  std::map<std::string, std::string> meta;  // training metadata + dsp config
};

// Binary format: magic, version, UTF-8 key=value header block, then named
// tensors as little-endian float32 with shape prefixes. A load/save round
// trip reproduces forward outputs bit-for-bit.
void save_checkpoint(const std::string& path, const ModelConfig& cfg, Params<float>& params,
                     const std::map<std::string, std::string>& meta);
Checkpoint load_checkpoint(const std::string& path);

std::map<std::string, std::string> model_config_to_kv(const ModelConfig& cfg);
ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> dsp_config_to_kv(const dsp::DspConfig& cfg);
dsp::DspConfig dsp_config_from_kv(const std::map<std::string, std::string>& kv);

}  // namespace sdd::model
