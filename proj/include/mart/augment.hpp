#pragma once

#include "mart/audio.hpp"
#include "mart/common.hpp"

namespace mart::dsp {

// Stochastic waveform augmentation chain. Transforms are applied
// independently, each with its own probability, in the fixed order
// polarity, noise, gain, filter, delay, pitch shift. Output length always
// equals input length; everything is deterministic given the rng.
struct AugmentationConfig {
  double p_polarity = 0.5;
  double p_noise = 0.4;
  double p_gain = 0.5;
  double p_filter = 0.4;
  double p_delay = 0.3;
  double p_pitch = 0.4;

  double noise_snr_db_min = 10.0;
  double noise_snr_db_max = 30.0;
  double gain_db_min = -12.0;
  double gain_db_max = 0.0;
  double lowpass_hz_min = 2200.0;
  double lowpass_hz_max = 4000.0;
  double highpass_hz_min = 200.0;
  double highpass_hz_max = 1200.0;
  double delay_ms_min = 50.0;
  double delay_ms_max = 200.0;
  double delay_decay_min = 0.3;
  double delay_decay_max = 0.7;
  double pitch_semitone_range = 2.0;  // shift drawn from +- this many semitones

  static AugmentationConfig all_off() {
    AugmentationConfig c;
    c.p_polarity = c.p_noise = c.p_gain = c.p_filter = c.p_delay = c.p_pitch = 0.0;
    return c;
  }

  void validate() const;
};

AudioBuffer augment(const AudioBuffer& buf, const AugmentationConfig& cfg, Rng& rng);

}  // namespace mart::dsp
