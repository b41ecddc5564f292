#include "sdd/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace sdd::wav {

namespace {

struct FileCloser {
  std::FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

uint32_t rd_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t rd_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

dsp::Waveform read_wav16(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open wav: " + path);
  FileCloser closer{f};

  unsigned char hdr[12];
  if (std::fread(hdr, 1, 12, f) != 12 || std::memcmp(hdr, "RIFF", 4) != 0 ||
      std::memcmp(hdr + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  int sample_rate = 0;
  int channels = 0;
  int bits = 0;
  std::vector<unsigned char> data;

  unsigned char chunk[8];
  while (std::fread(chunk, 1, 8, f) == 8) {
    const uint32_t size = rd_u32(chunk + 4);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      std::vector<unsigned char> fmt(size);
      if (std::fread(fmt.data(), 1, size, f) != size)
        throw std::runtime_error("truncated fmt chunk: " + path);
      const uint16_t audio_format = rd_u16(fmt.data());
      channels = rd_u16(fmt.data() + 2);
      sample_rate = static_cast<int>(rd_u32(fmt.data() + 4));
      bits = rd_u16(fmt.data() + 14);
      if (audio_format != 1) throw std::runtime_error("wav is not PCM: " + path);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data.resize(size);
      if (std::fread(data.data(), 1, size, f) != size)
        throw std::runtime_error("truncated data chunk: " + path);
    } else {
      if (std::fseek(f, static_cast<long>(size + (size & 1)), SEEK_CUR) != 0)
        throw std::runtime_error("bad chunk layout: " + path);
    }
  }
  if (channels != 1 || bits != 16)
    throw std::runtime_error("expected 16-bit mono PCM: " + path);
  if (data.empty()) throw std::runtime_error("wav has no data chunk: " + path);

  dsp::Waveform w;
  w.sample_rate = sample_rate;
  const size_t n = data.size() / 2;
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const int16_t s = static_cast<int16_t>(data[2 * i] | (data[2 * i + 1] << 8));
    w.samples[i] = static_cast<float>(s) / 32768.0f;
  }
  return w;
}

void write_wav16(const std::string& path, const dsp::Waveform& w) {
  dsp::validate(w);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open wav for write: " + path);
  FileCloser closer{f};

  const uint32_t n_bytes = static_cast<uint32_t>(w.samples.size() * 2);
  const uint32_t sr = static_cast<uint32_t>(w.sample_rate);
  unsigned char hdr[44];
  std::memcpy(hdr, "RIFF", 4);
  const uint32_t riff_size = 36 + n_bytes;
  std::memcpy(hdr + 4, &riff_size, 4);
  std::memcpy(hdr + 8, "WAVEfmt ", 8);
  const uint32_t fmt_size = 16;
  std::memcpy(hdr + 16, &fmt_size, 4);
  const uint16_t pcm = 1, mono = 1, bits = 16, block = 2;
  std::memcpy(hdr + 20, &pcm, 2);
  std::memcpy(hdr + 22, &mono, 2);
  std::memcpy(hdr + 24, &sr, 4);
  const uint32_t byte_rate = sr * 2;
  std::memcpy(hdr + 28, &byte_rate, 4);
  std::memcpy(hdr + 32, &block, 2);
  std::memcpy(hdr + 34, &bits, 2);
  std::memcpy(hdr + 36, "data", 4);
  std::memcpy(hdr + 40, &n_bytes, 4);
  if (std::fwrite(hdr, 1, 44, f) != 44) throw std::runtime_error("short write: " + path);

  std::vector<int16_t> pcm16(w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i) {
    const float x = std::clamp(w.samples[i], -1.0f, 1.0f);
    pcm16[i] = static_cast<int16_t>(std::lrintf(x * 32767.0f));
  }
  if (std::fwrite(pcm16.data(), 2, pcm16.size(), f) != pcm16.size())
    throw std::runtime_error("short write: " + path);
}

}  // namespace sdd::wav
