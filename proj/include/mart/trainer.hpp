#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "mart/adam.hpp"
#include "mart/augment.hpp"
#include "mart/checkpoint.hpp"
#include "mart/config.hpp"
#include "mart/gradcheck.hpp"
#include "mart/loss.hpp"
#include "mart/model.hpp"
#include "mart/synth.hpp"

namespace mart::train {

// Decoded corpus held in memory; desk-scale corpora are small enough that
// re-decoding WAVs every epoch would dominate the step time.
struct Corpus {
  std::vector<dsp::ManifestEntry> entries;
  std::vector<dsp::AudioBuffer> waves;

  static Corpus load(const std::string& manifest_path);
};

// Exact root-length view of a track: longer tracks are cropped at the given
// offset, shorter ones cyclically padded.
dsp::AudioBuffer fit_to_root(const dsp::AudioBuffer& wave, long root_len, long offset);

// Forward pass of one instance: every tree node of the first view is
// encoded and (unless bypassed) run through the part-whole transformer
// stack, then head-projected; the second view contributes only its
// head-projected root encoding. Templated so the 64-bit gradient check can
// drive the identical code path.
template <class R>
loss::InstanceVectors<R> instance_forward(const dsp::AudioBuffer& view1,
                                          const dsp::AudioBuffer& view2,
                                          const hac::ClipTree& tree,
                                          model::MartModel<R>& m, size_t frames,
                                          bool training, bool use_pwt,
                                          model::AttnCounter* counter = nullptr) {
  model::HierState<R> tilde;
  for (size_t n = 0; n < tree.depth; ++n) {
    std::vector<diff::Tensor<R>> rows;
    rows.reserve(tree.levels[n].size());
    for (const hac::ClipNode& node : tree.levels[n]) {
      dsp::LogMelSpec spec = dsp::logmel_for_clip(view1, node.start, node.end, frames);
      rows.push_back(model::encode(spec, m.encoder, training));
    }
    tilde.levels.push_back(diff::concat_rows(rows));
  }
  model::HierState<R> hat =
      use_pwt ? model::pwt_stack(tilde, m.pwt_blocks, tree.branching, counter) : tilde;

  loss::InstanceVectors<R> out;
  out.tree = &tree;
  for (auto& level : hat.levels) out.hat_levels.push_back(model::project_head(level, m.head));

  dsp::LogMelSpec root_spec =
      dsp::logmel_for_clip(view2, tree.root().start, tree.root().end, frames);
  diff::Tensor<R> root_vec = model::encode(root_spec, m.encoder, training);
  out.root_tilde = model::project_head(root_vec, m.head);
  return out;
}

// Deterministic eval-mode embedding: the post-interaction root
// representation before the projection head (D_e wide).
template <class R>
std::vector<R> embed_root(const dsp::AudioBuffer& wave, const hac::ClipTree& tree,
                          model::MartModel<R>& m, size_t frames, bool use_pwt) {
  model::HierState<R> tilde;
  for (size_t n = 0; n < tree.depth; ++n) {
    std::vector<diff::Tensor<R>> rows;
    for (const hac::ClipNode& node : tree.levels[n]) {
      dsp::LogMelSpec spec = dsp::logmel_for_clip(wave, node.start, node.end, frames);
      rows.push_back(model::encode(spec, m.encoder, false));
    }
    tilde.levels.push_back(diff::concat_rows(rows));
  }
  model::HierState<R> hat =
      use_pwt ? model::pwt_stack(tilde, m.pwt_blocks, tree.branching, nullptr) : tilde;
  diff::Tensor<R> root = diff::row(hat.levels[0], 0);
  return *root.data;
}

// Owns the model, optimizer and rng of one pretraining run. Not movable:
// the registry holds pointers into the model.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  // One optimization step over a batch of exact-root-length waveforms.
  loss::LossReport train_step(const std::vector<dsp::AudioBuffer>& batch);

  // Formats one loss-log line: step, mean L^hc, mean L^pw, per-pair sums.
  static std::string log_line(uint64_t step, uint64_t epoch, const loss::LossReport& report);

  CheckpointData snapshot() const;
  void restore(const CheckpointData& data);

  const TrainConfig& config() const { return cfg_; }
  model::MartModel<float>& model() { return model_; }
  Rng& rng() { return rng_; }
  uint64_t step() const { return step_; }
  uint64_t epoch() const { return epoch_; }
  void set_epoch(uint64_t e) { epoch_ = e; }
  uint64_t attention_calls() const { return attn_.calls; }
  const hac::ClipTree& tree() const { return tree_; }

  std::vector<float> embed(const dsp::AudioBuffer& wave);

 private:
  TrainConfig cfg_;
  hac::ClipTree tree_;
  model::MartModel<float> model_;
  diff::ParamRegistry<float> registry_;
  diff::AdamState<float> adam_;
  Rng rng_;
  uint64_t step_ = 0;
  uint64_t epoch_ = 0;
  model::AttnCounter attn_;
  loss::AblationMode mode_;
};

struct PretrainResult {
  std::string final_checkpoint;
  std::vector<std::string> log_lines;
};

// Runs cfg.epochs epochs over the manifest corpus, writing a checkpoint per
// epoch plus `loss_log.txt` into cfg.checkpoint_dir.
PretrainResult pretrain(const TrainConfig& cfg, std::ostream* console = nullptr);

// Continues a checkpointed run until its configured epoch count; the
// trajectory is bitwise identical to the unbroken run.
PretrainResult resume_pretrain(const std::string& checkpoint_path,
                               std::ostream* console = nullptr);

std::unique_ptr<Trainer> trainer_from_checkpoint(const std::string& path);

// Small-width profile for the end-to-end 64-bit gradient check: the whole
// pipeline (spectrograms, encoder, stacked part-whole transformers, head,
// batch loss) evaluated in double precision against central differences.
struct GradcheckProfile {
  size_t d_e = 8;
  size_t d_t = 6;
  size_t heads = 3;
  size_t blocks = 3;
  size_t m = 2;
  size_t n = 3;
  size_t frames = 16;
  size_t contrastive_dim = 16;
  size_t batch = 2;
  double tau = 0.5;
  uint64_t seed = 5;
  double h = 1e-5;
  double tolerance = 1e-4;
};

diff::GradCheckReport full_model_gradcheck(const GradcheckProfile& profile);

}  // namespace mart::train
