#pragma once

#include <string>

#include "sdd/dsp.hpp"

namespace sdd::wav {

// 16-bit PCM mono RIFF/WAVE.
dsp::Waveform read_wav16(const std::string& path);
void write_wav16(const std::string& path, const dsp::Waveform& w);

}  // namespace sdd::wav
