#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace sdd::dsp {

// Mono PCM signal, samples in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;
};

void validate(const Waveform& w);

struct DspConfig {
  int sample_rate = 16000;
  int win_length = 400;  // 25 ms
  int hop_length = 160;  // 10 ms
  int n_fft = 512;
  int n_mels = 128;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;
  int target_frames = 256;
  // Optional per-corpus standardization of log energies (valid frames only).
  bool standardize = false;
  double norm_mean = 0.0;
  double norm_std = 1.0;

  double pad_value() const { return std::log(log_floor); }
  void validate() const;
};

// Log-mel energies, row-major [n_mels x n_frames]. Columns past valid_frames
// hold the pad constant.
struct MelSpectrogram {
  int n_mels = 0;
  int n_frames = 0;
  int valid_frames = 0;
  std::vector<float> values;

  MelSpectrogram() = default;
  MelSpectrogram(int mels, int frames)
      : n_mels(mels), n_frames(frames), valid_frames(frames),
        values(static_cast<size_t>(mels) * frames, 0.0f) {}
  float& at(int mel, int frame) { return values[static_cast<size_t>(mel) * n_frames + frame]; }
  float at(int mel, int frame) const { return values[static_cast<size_t>(mel) * n_frames + frame]; }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

std::vector<double> hamming_window(int n);

// Triangular filters on the FFT bin grid, corners equally spaced on the HTK
// mel scale, area-unnormalized. Shape [n_mels][n_fft/2 + 1].
std::vector<std::vector<double>> mel_filterbank(const DspConfig& cfg);

// |FFT|^2 of one windowed, zero-padded frame; bins 0..n_fft/2.
std::vector<double> power_spectrum(const float* frame, int len, const std::vector<double>& window,
                                   int n_fft);

int frame_count(size_t n_samples, const DspConfig& cfg);

MelSpectrogram log_mel_spectrogram(const Waveform& w, const DspConfig& cfg);

MelSpectrogram pad_or_truncate(const MelSpectrogram& spec, int target_frames, double pad_value);

// Sample interval [begin, end) covered by one valid spectrogram frame.
std::pair<int64_t, int64_t> frame_sample_span(int frame_idx, int valid_frames,
                                              const DspConfig& cfg);

// Raw little-endian float32 serialization with an (n_mels, n_frames,
// valid_frames) header.
void save_spectrogram(const std::string& path, const MelSpectrogram& spec);
MelSpectrogram load_spectrogram(const std::string& path);

}  // namespace sdd::dsp
