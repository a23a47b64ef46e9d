#include "mart/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace mart::dsp {

namespace {

uint32_t read_u32le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16le(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

[[noreturn]] void fail(const std::string& path, size_t offset, const std::string& what) {
  throw ParseError("load_wav: " + path + ": " + what + " at byte offset " +
                   std::to_string(offset));
}

}  // namespace

AudioBuffer load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12) fail(path, bytes.size(), "file too short for RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0) fail(path, 0, "missing RIFF magic");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) fail(path, 8, "missing WAVE form type");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data_ptr = nullptr;
  size_t data_len = 0, fmt_offset = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const uint32_t chunk_len = read_u32le(bytes.data() + pos + 4);
    const size_t body = pos + 8;
    if (body + chunk_len > bytes.size())
      fail(path, pos, "chunk '" + std::string(id, 4) + "' overruns file");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk_len < 16) fail(path, pos, "fmt chunk too short");
      format = read_u16le(bytes.data() + body);
      channels = read_u16le(bytes.data() + body + 2);
      rate = read_u32le(bytes.data() + body + 4);
      bits = read_u16le(bytes.data() + body + 14);
      have_fmt = true;
      fmt_offset = body;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_ptr = bytes.data() + body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  if (!have_fmt) fail(path, pos, "no fmt chunk");
  if (data_ptr == nullptr) fail(path, pos, "no data chunk");
  if (channels != 1 && channels != 2)
    fail(path, fmt_offset, "unsupported channel count " + std::to_string(channels));
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    fail(path, fmt_offset,
         "unsupported codec (format " + std::to_string(format) + ", " + std::to_string(bits) +
             " bits); expected PCM16 or float32");
  if (rate == 0) fail(path, fmt_offset, "zero sample rate");

  const size_t bytes_per_sample = pcm16 ? 2 : 4;
  const size_t frame_bytes = bytes_per_sample * channels;
  const size_t frames = data_len / frame_bytes;
  if (frames == 0) fail(path, static_cast<size_t>(data_ptr - bytes.data()), "empty data chunk");

  AudioBuffer out;
  out.sample_rate = static_cast<int>(rate);
  out.samples.resize(frames);
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0;
    for (size_t c = 0; c < channels; ++c) {
      const unsigned char* sp = data_ptr + i * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        int16_t v;
        std::memcpy(&v, sp, 2);
        acc += static_cast<double>(v) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, sp, 4);
        acc += static_cast<double>(v);
      }
    }
    out.samples[i] = static_cast<float>(acc / channels);
  }
  return out;
}

void write_wav(const std::string& path, const AudioBuffer& buf) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_wav: cannot open " + path + " for writing");
  const uint32_t data_len = static_cast<uint32_t>(buf.samples.size() * 2);
  const uint32_t riff_len = 36 + data_len;
  const uint32_t rate = static_cast<uint32_t>(buf.sample_rate);
  const uint32_t byte_rate = rate * 2;

  auto put_u32 = [&](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  auto put_u16 = [&](uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<char*>(b), 2);
  };

  out.write("RIFF", 4);
  put_u32(riff_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(rate);
  put_u32(byte_rate);
  put_u16(2);   // block align
  put_u16(16);  // bits
  out.write("data", 4);
  put_u32(data_len);
  for (float s : buf.samples) {
    const long v = std::lround(static_cast<double>(s) * 32768.0);
    const long clamped = std::clamp(v, -32768L, 32767L);
    put_u16(static_cast<uint16_t>(static_cast<int16_t>(clamped)));
  }
  if (!out) throw IoError("write_wav: write failed for " + path);
}

AudioBuffer resample(const AudioBuffer& buf, int target_rate) {
  if (target_rate <= 0) throw DomainError("resample: target rate must be positive");
  if (target_rate == buf.sample_rate) return buf;
  const size_t in_len = buf.samples.size();
  const size_t out_len = static_cast<size_t>(std::llround(
      static_cast<double>(in_len) * target_rate / buf.sample_rate));
  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.resize(std::max<size_t>(out_len, 1));
  const double step = static_cast<double>(buf.sample_rate) / target_rate;
  for (size_t i = 0; i < out.samples.size(); ++i) {
    const double pos = i * step;
    size_t i0 = static_cast<size_t>(pos);
    if (i0 >= in_len - 1) {
      out.samples[i] = buf.samples[in_len - 1];
      continue;
    }
    const double frac = pos - i0;
    out.samples[i] = static_cast<float>((1.0 - frac) * buf.samples[i0] +
                                        frac * buf.samples[i0 + 1]);
  }
  return out;
}

}  // namespace mart::dsp
