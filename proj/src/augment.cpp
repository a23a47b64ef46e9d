#include "mart/augment.hpp"

#include <algorithm>
#include <cmath>

namespace mart::dsp {

namespace {
constexpr double kPi = 3.14159265358979323846;

void check_prob(double p, const char* name) {
  if (p < 0.0 || p > 1.0)
    throw ConfigError(std::string("AugmentationConfig: probability ") + name +
                      " outside [0,1]");
}

void check_range(double lo, double hi, const char* name) {
  if (!(lo <= hi))
    throw ConfigError(std::string("AugmentationConfig: empty or reversed range ") + name);
}

void apply_lowpass(std::vector<float>& s, double cutoff_hz, double rate) {
  const double rc = 1.0 / (2.0 * kPi * cutoff_hz);
  const double dt = 1.0 / rate;
  const double a = dt / (rc + dt);
  double y = 0.0;
  for (float& v : s) {
    y += a * (static_cast<double>(v) - y);
    v = static_cast<float>(y);
  }
}

void apply_highpass(std::vector<float>& s, double cutoff_hz, double rate) {
  const double rc = 1.0 / (2.0 * kPi * cutoff_hz);
  const double dt = 1.0 / rate;
  const double a = rc / (rc + dt);
  double y = 0.0, x_prev = 0.0;
  for (float& v : s) {
    const double x = static_cast<double>(v);
    y = a * (y + x - x_prev);
    x_prev = x;
    v = static_cast<float>(y);
  }
}

}  // namespace

void AugmentationConfig::validate() const {
  check_prob(p_polarity, "p_polarity");
  check_prob(p_noise, "p_noise");
  check_prob(p_gain, "p_gain");
  check_prob(p_filter, "p_filter");
  check_prob(p_delay, "p_delay");
  check_prob(p_pitch, "p_pitch");
  check_range(noise_snr_db_min, noise_snr_db_max, "noise_snr_db");
  check_range(gain_db_min, gain_db_max, "gain_db");
  check_range(lowpass_hz_min, lowpass_hz_max, "lowpass_hz");
  check_range(highpass_hz_min, highpass_hz_max, "highpass_hz");
  check_range(delay_ms_min, delay_ms_max, "delay_ms");
  check_range(delay_decay_min, delay_decay_max, "delay_decay");
  if (pitch_semitone_range < 0.0)
    throw ConfigError("AugmentationConfig: negative pitch_semitone_range");
}

AudioBuffer augment(const AudioBuffer& buf, const AugmentationConfig& cfg, Rng& rng) {
  cfg.validate();
  AudioBuffer out = buf;
  const size_t len = out.samples.size();
  bool touched = false;

  if (rng.bernoulli(cfg.p_polarity)) {
    for (float& v : out.samples) v = -v;
    touched = true;
  }

  if (rng.bernoulli(cfg.p_noise)) {
    double power = 0.0;
    for (float v : out.samples) power += static_cast<double>(v) * v;
    power /= static_cast<double>(len);
    if (power > 1e-12) {
      const double snr_db = rng.uniform(cfg.noise_snr_db_min, cfg.noise_snr_db_max);
      const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
      for (float& v : out.samples) v += static_cast<float>(sigma * rng.normal());
      touched = true;
    }
  }

  if (rng.bernoulli(cfg.p_gain)) {
    const double db = rng.uniform(cfg.gain_db_min, cfg.gain_db_max);
    const float g = static_cast<float>(std::pow(10.0, db / 20.0));
    for (float& v : out.samples) v *= g;
    touched = true;
  }

  if (rng.bernoulli(cfg.p_filter)) {
    if (rng.bernoulli(0.5)) {
      apply_lowpass(out.samples, rng.uniform(cfg.lowpass_hz_min, cfg.lowpass_hz_max),
                    out.sample_rate);
    } else {
      apply_highpass(out.samples, rng.uniform(cfg.highpass_hz_min, cfg.highpass_hz_max),
                     out.sample_rate);
    }
    touched = true;
  }

  if (rng.bernoulli(cfg.p_delay)) {
    const double ms = rng.uniform(cfg.delay_ms_min, cfg.delay_ms_max);
    const double decay = rng.uniform(cfg.delay_decay_min, cfg.delay_decay_max);
    const size_t d = static_cast<size_t>(ms / 1000.0 * out.sample_rate);
    if (d >= 1 && d < len) {
      for (size_t i = len; i-- > d;)
        out.samples[i] += static_cast<float>(decay) * out.samples[i - d];
      touched = true;
    }
  }

  if (rng.bernoulli(cfg.p_pitch)) {
    const double semis = rng.uniform(-cfg.pitch_semitone_range, cfg.pitch_semitone_range);
    const double factor = std::pow(2.0, semis / 12.0);
    // Speed-change resample reinterpreted at the original rate scales the
    // spectrum by `factor`; length is restored by cyclic pad or trim.
    const int squeezed_rate =
        std::max(1, static_cast<int>(std::lround(out.sample_rate / factor)));
    AudioBuffer shifted = resample(out, squeezed_rate);
    shifted.sample_rate = out.sample_rate;
    shifted.samples.reserve(len);
    if (shifted.samples.size() > len) {
      shifted.samples.resize(len);
    } else {
      size_t i = 0;
      while (shifted.samples.size() < len) {
        shifted.samples.push_back(shifted.samples[i++]);
      }
    }
    out = std::move(shifted);
    touched = true;
  }

  if (touched) {
    for (float& v : out.samples) v = std::clamp(v, -1.0f, 1.0f);
  }
  return out;
}

}  // namespace mart::dsp
