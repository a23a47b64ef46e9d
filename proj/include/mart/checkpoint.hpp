#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mart/tensor.hpp"

namespace mart::train {

// MARTCKPT container: magic "MARTCKPT", format version u32, then repeated
// records `name_len:u32, name:utf8, rank:u32, dims:u32[rank],
// data:f32[prod(dims)]`, little-endian. Non-tensor state rides in reserved
// records so any reader of the record format can walk the whole file:
//   meta/config     config snapshot, one byte per f32
//   meta/rng        serialized rng engine, one byte per f32
//   meta/step       global step counter
//   meta/epoch      completed epochs
//   meta/adam_step  optimizer step counter
// followed by param/<name>, adam/m/<name>, adam/v/<name> per trainable
// tensor and state/<name> for batchnorm running stats. Save -> load -> save
// is byte-identical.
struct CheckpointData {
  uint32_t version = 1;
  std::string config_text;
  std::string rng_state;
  uint64_t step = 0;
  uint64_t epoch = 0;
  long adam_step = 0;
  std::vector<std::pair<std::string, diff::Tensor<float>>> tensors;

  const diff::Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace mart::train
