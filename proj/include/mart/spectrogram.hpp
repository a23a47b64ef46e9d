#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "mart/audio.hpp"
#include "mart/common.hpp"

namespace mart::dsp {

// In-place radix-2 FFT; length must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a);

// Periodic Hann window.
std::vector<double> hann_window(size_t n);

// Hann-windowed STFT magnitudes of a sample span. Returns frames x bins in
// row-major order with bins = window/2 + 1; frame count
// 1 + floor((len - window)/hop). The span must be at least one window long.
struct StftResult {
  size_t frames = 0;
  size_t bins = 0;
  std::vector<double> magnitudes;  // frames x bins

  double at(size_t frame, size_t bin) const { return magnitudes[frame * bins + bin]; }
};
StftResult stft(std::span<const float> samples, size_t window, size_t hop);

// Triangular mel filterbank over FFT bins (HTK mel scale). Filters whose
// triangular support covers no bin center are assigned their nearest bin
// with weight 1, so every filter has nonzero area.
struct MelFilterbank {
  size_t mel_bands = 0;
  size_t bins = 0;
  std::vector<double> weights;  // mel_bands x bins

  static MelFilterbank build(size_t mel_bands, size_t bins, double sample_rate,
                             double fmin = 0.0, double fmax = -1.0);
  double row_sum(size_t band) const;
};

// Applies the filterbank to power (magnitude squared): [bands x frames].
std::vector<double> mel_project(const StftResult& spec, const MelFilterbank& fb);

// Fixed-size log-mel spectrogram of one clip. Every clip of an instance
// shares one matrix shape regardless of duration; hop length adapts.
struct LogMelSpec {
  size_t mel_bands = 0;
  size_t frames = 0;
  std::vector<float> values;  // mel_bands x frames
  long start_sample = 0;
  long end_sample = 0;

  float at(size_t band, size_t frame) const { return values[band * frames + frame]; }
};

inline constexpr size_t kStftWindow = 256;
inline constexpr size_t kMelBands = 128;
inline constexpr double kLogFloor = 1e-6;

// Minimum span length able to produce `target_frames` frames at hop >= 1.
inline size_t logmel_min_span(size_t target_frames, size_t window = kStftWindow) {
  return window + (target_frames - 1);
}

// hop = floor((span_len - window) / (target_frames - 1)); exactly
// target_frames frames are kept, excess trailing samples are dropped.
// Compression is log(power + 1e-6).
LogMelSpec logmel_for_clip(const AudioBuffer& buf, long start, long end, size_t target_frames,
                           size_t window = kStftWindow, size_t mel_bands = kMelBands);

}  // namespace mart::dsp
