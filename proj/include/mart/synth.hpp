#pragma once

#include <string>
#include <vector>

#include "mart/audio.hpp"
#include "mart/common.hpp"

namespace mart::dsp {

// Desk-scale corpus generator. Tracks are mixtures of class-specific tone
// textures (disjoint frequency bands per class, so classes stay linearly
// separable in mean-log-mel space even under the augmentation chain) plus a
// low noise floor. Tracks are grouped into cover cliques: members of a
// clique share partial structure and differ by pitch shift, time stretch
// and gain.
struct SynthSpec {
  size_t n_tracks = 100;
  size_t n_classes = 4;
  size_t n_cliques = 20;
  size_t max_tags_per_track = 2;
  int sample_rate = 16000;
  double seconds = 12.8;
  uint64_t seed = 1;
  std::string out_dir;

  void validate() const;
};

struct ManifestEntry {
  std::string path;  // resolved absolute or out_dir-relative path
  std::vector<std::string> tags;
  std::string clique;
};

// Generates WAV files plus `manifest.tsv` in spec.out_dir and returns the
// entries with paths resolved for immediate loading.
std::vector<ManifestEntry> synth_corpus(const SynthSpec& spec);

// Line format: track_path<TAB>tag1,tag2,...<TAB>clique_id, UTF-8. Relative
// paths resolve against the manifest's directory.
std::vector<ManifestEntry> load_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Distinct tag names in first-seen order.
std::vector<std::string> collect_tags(const std::vector<ManifestEntry>& entries);

}  // namespace mart::dsp
