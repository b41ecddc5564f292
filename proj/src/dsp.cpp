#include "sdd/dsp.hpp"

#include <algorithm>
#include <bit>
#include <complex>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace sdd::dsp {

void validate(const Waveform& w) {
  if (w.samples.empty()) throw std::invalid_argument("waveform: empty");
  if (w.sample_rate <= 0) throw std::invalid_argument("waveform: sample_rate must be > 0");
  for (float s : w.samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("waveform: non-finite sample");
  }
}

void DspConfig::validate() const {
  if (win_length > n_fft) throw std::invalid_argument("dsp: win_length must be <= n_fft");
  if (!std::has_single_bit(static_cast<unsigned>(n_fft)))
    throw std::invalid_argument("dsp: n_fft must be a power of two");
  if (fmax > sample_rate / 2.0) throw std::invalid_argument("dsp: fmax above Nyquist");
  if (target_frames < 2 || target_frames % 2 != 0)
    throw std::invalid_argument("dsp: target_frames must be even and positive");
  if (hop_length <= 0 || win_length <= 0) throw std::invalid_argument("dsp: bad frame geometry");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> hamming_window(int n) {
  if (n < 1) throw std::invalid_argument("hamming_window: n must be >= 1");
  std::vector<double> w(n);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  for (int k = 0; k < n; ++k) {
    w[k] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * k / (n - 1));
  }
  return w;
}

namespace {

// Iterative radix-2 complex FFT, in place. Size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace

std::vector<std::vector<double>> mel_filterbank(const DspConfig& cfg) {
  const int n_bins = cfg.n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> corners(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    corners[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));
  }
  std::vector<std::vector<double>> fb(cfg.n_mels, std::vector<double>(n_bins, 0.0));
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double fl = corners[m], fc = corners[m + 1], fr = corners[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double up = (f - fl) / std::max(fc - fl, 1e-12);
      const double down = (fr - f) / std::max(fr - fc, 1e-12);
      fb[m][k] = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

std::vector<double> power_spectrum(const float* frame, int len, const std::vector<double>& window,
                                   int n_fft) {
  if (len > n_fft) throw std::invalid_argument("power_spectrum: frame longer than n_fft");
  if (static_cast<int>(window.size()) < len)
    throw std::invalid_argument("power_spectrum: window shorter than frame");
  std::vector<std::complex<double>> a(n_fft, {0.0, 0.0});
  for (int i = 0; i < len; ++i) a[i] = frame[i] * window[i];
  fft_inplace(a);
  std::vector<double> out(n_fft / 2 + 1);
  for (int k = 0; k <= n_fft / 2; ++k) out[k] = std::norm(a[k]);
  return out;
}

int frame_count(size_t n_samples, const DspConfig& cfg) {
  if (n_samples < static_cast<size_t>(cfg.win_length)) return 0;
  return 1 + static_cast<int>((n_samples - cfg.win_length) / cfg.hop_length);
}

MelSpectrogram log_mel_spectrogram(const Waveform& w, const DspConfig& cfg) {
  validate(w);
  cfg.validate();
  const int frames = frame_count(w.samples.size(), cfg);
  if (frames < 1)
    throw std::invalid_argument("log_mel_spectrogram: waveform shorter than one window");

  const auto window = hamming_window(cfg.win_length);
  const auto fb = mel_filterbank(cfg);
  const int n_bins = cfg.n_fft / 2 + 1;

  MelSpectrogram spec(cfg.n_mels, frames);
  spec.valid_frames = frames;
  for (int t = 0; t < frames; ++t) {
    const float* frame = w.samples.data() + static_cast<size_t>(t) * cfg.hop_length;
    const auto ps = power_spectrum(frame, cfg.win_length, window, cfg.n_fft);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const auto& filt = fb[m];
      for (int k = 0; k < n_bins; ++k) e += filt[k] * ps[k];
      double v = std::log(std::max(e, cfg.log_floor));
      if (cfg.standardize) v = (v - cfg.norm_mean) / cfg.norm_std;
      spec.at(m, t) = static_cast<float>(v);
    }
  }
  return spec;
}

MelSpectrogram pad_or_truncate(const MelSpectrogram& spec, int target_frames, double pad_value) {
  if (target_frames < 1) throw std::invalid_argument("pad_or_truncate: target_frames must be >= 1");
  MelSpectrogram out(spec.n_mels, target_frames);
  const int copy = std::min(spec.n_frames, target_frames);
  const float pad = static_cast<float>(pad_value);
  for (int m = 0; m < spec.n_mels; ++m) {
    for (int t = 0; t < copy; ++t) out.at(m, t) = spec.at(m, t);
    for (int t = copy; t < target_frames; ++t) out.at(m, t) = pad;
  }
  out.valid_frames = std::min(spec.valid_frames, target_frames);
  return out;
}

std::pair<int64_t, int64_t> frame_sample_span(int frame_idx, int valid_frames,
                                              const DspConfig& cfg) {
  if (frame_idx < 0 || frame_idx >= valid_frames)
    throw std::invalid_argument("frame_sample_span: frame in padding region");
  const int64_t start = static_cast<int64_t>(frame_idx) * cfg.hop_length;
  return {start, start + cfg.win_length};
}

namespace {
constexpr char kSpecMagic[8] = {'S', 'D', 'D', 'S', 'P', 'E', 'C', '1'};
}

void save_spectrogram(const std::string& path, const MelSpectrogram& spec) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  uint32_t dims[3] = {static_cast<uint32_t>(spec.n_mels), static_cast<uint32_t>(spec.n_frames),
                      static_cast<uint32_t>(spec.valid_frames)};
  bool ok = std::fwrite(kSpecMagic, 1, 8, f) == 8 && std::fwrite(dims, 4, 3, f) == 3 &&
            std::fwrite(spec.values.data(), 4, spec.values.size(), f) == spec.values.size();
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write: " + path);
}

MelSpectrogram load_spectrogram(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  char magic[8];
  uint32_t dims[3];
  if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kSpecMagic, 8) != 0 ||
      std::fread(dims, 4, 3, f) != 3) {
    std::fclose(f);
    throw std::runtime_error("bad spectrogram header: " + path);
  }
  MelSpectrogram spec(static_cast<int>(dims[0]), static_cast<int>(dims[1]));
  spec.valid_frames = static_cast<int>(dims[2]);
  if (std::fread(spec.values.data(), 4, spec.values.size(), f) != spec.values.size()) {
    std::fclose(f);
    throw std::runtime_error("short read: " + path);
  }
  std::fclose(f);
  return spec;
}

}  // namespace sdd::dsp
