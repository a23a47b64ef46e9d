#pragma once

#include <string>
#include <vector>

#include "mart/augment.hpp"
#include "mart/common.hpp"

namespace mart::train {

// Pretraining configuration. The config file is line-based `key = value`
// UTF-8 with exactly these keys; lambda_down/lambda_up accept either a
// single value broadcast over all level pairs or a comma list of n-1
// values.
struct TrainConfig {
  size_t m = 2;  // branching factor
  size_t n = 4;  // hierarchy levels
  int sample_rate = 16000;
  double root_seconds = 12.8;
  size_t frames = 128;  // T, log-mel frames per clip
  size_t d_e = 512;
  size_t d_t = 192;
  size_t heads = 3;
  size_t blocks = 3;
  size_t contrastive_dim = 256;
  double tau = 0.5;
  std::vector<double> lambda_down{1.0};
  std::vector<double> lambda_up{1.0};
  size_t batch = 48;
  double lr = 0.0003;
  double weight_decay = 1e-6;
  size_t epochs = 20;
  uint64_t seed = 1;
  std::string ablation = "full";
  std::string manifest;
  std::string checkpoint_dir;

  dsp::AugmentationConfig aug;  // fixed defaults, not part of the key set

  long root_samples() const {
    return static_cast<long>(root_seconds * sample_rate + 0.5);
  }

  // lambda lists broadcast to one entry per level pair
  std::vector<double> lambda_down_full() const;
  std::vector<double> lambda_up_full() const;

  void validate() const;

  // Paper-width settings shrunk to run on one CPU core.
  static TrainConfig desk_profile();
};

TrainConfig parse_config_file(const std::string& path);
TrainConfig parse_config_text(const std::string& text, const std::string& origin);

// Applies one `key=value` override; unknown keys raise ConfigError.
void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value);

// Canonical serialization: fixed key order, full float precision, so a
// parse -> serialize round trip is byte-identical.
std::string serialize_config(const TrainConfig& cfg);

}  // namespace mart::train
