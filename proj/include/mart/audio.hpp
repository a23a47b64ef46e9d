#pragma once

#include <string>
#include <vector>

#include "mart/common.hpp"

namespace mart::dsp {

// Mono waveform with samples in [-1, 1].
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = 16000;

  size_t size() const { return samples.size(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Reads a RIFF/WAVE file: PCM 16-bit or IEEE float 32-bit, mono or stereo.
// Stereo is downmixed by averaging; integer samples are scaled to [-1, 1].
// Malformed input raises ParseError naming the byte offset.
AudioBuffer load_wav(const std::string& path);

// Writes mono PCM 16-bit.
void write_wav(const std::string& path, const AudioBuffer& buf);

// Linear-interpolation resampling; output length = round(len * target/source).
AudioBuffer resample(const AudioBuffer& buf, int target_rate);

}  // namespace mart::dsp
