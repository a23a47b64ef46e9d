#include "mart/spectrogram.hpp"

#include <algorithm>
#include <cmath>

namespace mart::dsp {

namespace {
constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }
}  // namespace

void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw DimensionError("fft_radix2: length " + std::to_string(n) + " is not a power of two");
  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

std::vector<double> hann_window(size_t n) {
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

StftResult stft(std::span<const float> samples, size_t window, size_t hop) {
  if (hop < 1) throw DomainError("stft: hop must be >= 1");
  if (samples.size() < window)
    throw DomainError("stft: clip of " + std::to_string(samples.size()) +
                      " samples is shorter than the window " + std::to_string(window));
  const std::vector<double> win = hann_window(window);
  StftResult out;
  out.frames = 1 + (samples.size() - window) / hop;
  out.bins = window / 2 + 1;
  out.magnitudes.resize(out.frames * out.bins);
  std::vector<std::complex<double>> frame(window);
  for (size_t f = 0; f < out.frames; ++f) {
    const size_t off = f * hop;
    for (size_t i = 0; i < window; ++i)
      frame[i] = std::complex<double>(static_cast<double>(samples[off + i]) * win[i], 0.0);
    fft_radix2(frame);
    for (size_t b = 0; b < out.bins; ++b) out.magnitudes[f * out.bins + b] = std::abs(frame[b]);
  }
  return out;
}

MelFilterbank MelFilterbank::build(size_t mel_bands, size_t bins, double sample_rate,
                                   double fmin, double fmax) {
  if (fmax <= 0.0) fmax = sample_rate / 2.0;
  MelFilterbank fb;
  fb.mel_bands = mel_bands;
  fb.bins = bins;
  fb.weights.assign(mel_bands * bins, 0.0);

  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(mel_bands + 2);
  for (size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(mel_bands + 1));

  // bin b sits at frequency b * sr / (2*(bins-1)) for a window of 2*(bins-1)
  const double bin_hz = sample_rate / (2.0 * static_cast<double>(bins - 1));
  for (size_t m = 0; m < mel_bands; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    double area = 0.0;
    for (size_t b = 0; b < bins; ++b) {
      const double f = b * bin_hz;
      double w = 0.0;
      if (f > lo && f < hi) {
        w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      }
      fb.weights[m * bins + b] = w;
      area += w;
    }
    if (area <= 0.0) {
      // support narrower than one bin: collapse onto the nearest bin center
      size_t nearest = static_cast<size_t>(std::lround(mid / bin_hz));
      nearest = std::min(nearest, bins - 1);
      fb.weights[m * bins + nearest] = 1.0;
    }
  }
  return fb;
}

double MelFilterbank::row_sum(size_t band) const {
  double s = 0.0;
  for (size_t b = 0; b < bins; ++b) s += weights[band * bins + b];
  return s;
}

std::vector<double> mel_project(const StftResult& spec, const MelFilterbank& fb) {
  if (spec.bins != fb.bins)
    throw DimensionError("mel_project: bin count " + std::to_string(spec.bins) +
                         " does not match filterbank " + std::to_string(fb.bins));
  std::vector<double> out(fb.mel_bands * spec.frames, 0.0);
  std::vector<double> power(spec.bins);
  for (size_t f = 0; f < spec.frames; ++f) {
    for (size_t b = 0; b < spec.bins; ++b) {
      const double m = spec.magnitudes[f * spec.bins + b];
      power[b] = m * m;
    }
    for (size_t m = 0; m < fb.mel_bands; ++m) {
      const double* w = fb.weights.data() + m * fb.bins;
      double acc = 0.0;
      for (size_t b = 0; b < spec.bins; ++b) acc += w[b] * power[b];
      out[m * spec.frames + f] = acc;
    }
  }
  return out;
}

LogMelSpec logmel_for_clip(const AudioBuffer& buf, long start, long end, size_t target_frames,
                           size_t window, size_t mel_bands) {
  if (start < 0 || end > static_cast<long>(buf.samples.size()) || start >= end)
    throw DomainError("logmel_for_clip: bad span [" + std::to_string(start) + "," +
                      std::to_string(end) + ")");
  if (target_frames < 1) throw DomainError("logmel_for_clip: target_frames must be >= 1");
  const size_t span_len = static_cast<size_t>(end - start);
  const size_t min_len = logmel_min_span(target_frames, window);
  if (span_len < min_len)
    throw DomainError("logmel_for_clip: span of " + std::to_string(span_len) +
                      " samples cannot produce " + std::to_string(target_frames) +
                      " frames; minimum length is " + std::to_string(min_len));
  const size_t hop = target_frames == 1 ? 1 : (span_len - window) / (target_frames - 1);

  std::span<const float> clip(buf.samples.data() + start, span_len);
  StftResult spec = stft(clip, window, hop);
  // the floor hop can overshoot the frame budget; keep exactly the first T
  spec.frames = std::min(spec.frames, target_frames);
  spec.magnitudes.resize(spec.frames * spec.bins);

  static thread_local MelFilterbank cached_fb;
  static thread_local double cached_rate = 0.0;
  static thread_local size_t cached_bands = 0, cached_bins = 0;
  if (cached_rate != buf.sample_rate || cached_bands != mel_bands || cached_bins != spec.bins) {
    cached_fb = MelFilterbank::build(mel_bands, spec.bins, buf.sample_rate);
    cached_rate = buf.sample_rate;
    cached_bands = mel_bands;
    cached_bins = spec.bins;
  }
  const std::vector<double> mel = mel_project(spec, cached_fb);

  LogMelSpec out;
  out.mel_bands = mel_bands;
  out.frames = target_frames;
  out.start_sample = start;
  out.end_sample = end;
  out.values.resize(mel_bands * target_frames);
  for (size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = static_cast<float>(std::log(mel[i] + kLogFloor));
  return out;
}

}  // namespace mart::dsp
