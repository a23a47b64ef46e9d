#include "mart/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace mart::dsp {

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

struct Partial {
  double freq_ratio;  // position inside the class band, [0,1]
  double amp;
  size_t class_id;
};

// Wide, low-amplitude band of sines acting as a clique fingerprint. Broad
// support keeps it correlated with itself under +-2 semitone shifts, where
// a single spectral line would move off its own mel band.
struct FingerprintBand {
  double center_hz;
  std::vector<double> ratios;  // per-sine frequency multipliers around center
};

// Structural description shared by every member of a clique.
struct CliqueRecipe {
  std::vector<size_t> classes;
  std::vector<Partial> partials;
  std::vector<FingerprintBand> fingerprint;
  double env_rate_hz;
  double env_depth;
};

// Class band c: one octave [lo, 2*lo] with lo spaced by factor 2.52, so a
// +-2 semitone shift (x0.891..x1.122) never crosses into a neighbour band.
void class_band(size_t c, double* lo, double* hi) {
  const double base = 200.0 * std::pow(2.52, static_cast<double>(c));
  *lo = base;
  *hi = base * 2.0;
}

std::vector<float> render_member(const CliqueRecipe& recipe, const SynthSpec& spec,
                                 double pitch_factor, double stretch_factor, double gain,
                                 Rng& rng) {
  const size_t len = static_cast<size_t>(spec.seconds * spec.sample_rate);
  std::vector<double> mix(len, 0.0);
  const double dt = 1.0 / spec.sample_rate;
  for (const Partial& p : recipe.partials) {
    double lo, hi;
    class_band(p.class_id, &lo, &hi);
    const double freq = (lo + p.freq_ratio * (hi - lo)) * pitch_factor;
    const double phase0 = rng.uniform(0.0, kTwoPi);
    const double w = kTwoPi * freq;
    for (size_t i = 0; i < len; ++i) mix[i] += p.amp * std::sin(w * i * dt + phase0);
  }
  for (const FingerprintBand& band : recipe.fingerprint) {
    for (double ratio : band.ratios) {
      const double freq = band.center_hz * ratio * pitch_factor;
      const double phase0 = rng.uniform(0.0, kTwoPi);
      const double w = kTwoPi * freq;
      for (size_t i = 0; i < len; ++i) mix[i] += 0.05 * std::sin(w * i * dt + phase0);
    }
  }
  // slow amplitude envelope; rate carries the time-stretch
  const double env_rate = recipe.env_rate_hz * stretch_factor;
  const double env_phase = rng.uniform(0.0, kTwoPi);
  for (size_t i = 0; i < len; ++i) {
    const double env =
        1.0 - recipe.env_depth * 0.5 * (1.0 + std::sin(kTwoPi * env_rate * i * dt + env_phase));
    mix[i] *= env;
  }
  double peak = 1e-9;
  for (double v : mix) peak = std::max(peak, std::abs(v));
  const double norm = 0.5 * gain / peak;
  std::vector<float> out(len);
  for (size_t i = 0; i < len; ++i) {
    const double noise = 0.003 * rng.normal();
    out[i] = static_cast<float>(std::clamp(mix[i] * norm + noise, -1.0, 1.0));
  }
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_classes < 2) throw ConfigError("synth_corpus: need at least 2 classes");
  if (n_cliques < 2) throw ConfigError("synth_corpus: need at least 2 cliques");
  if (n_tracks < n_cliques)
    throw ConfigError("synth_corpus: track count below clique count");
  if (max_tags_per_track < 1 || max_tags_per_track > n_classes)
    throw ConfigError("synth_corpus: max_tags_per_track out of range");
  if (sample_rate <= 0 || seconds <= 0) throw ConfigError("synth_corpus: bad rate/duration");
  if (out_dir.empty()) throw ConfigError("synth_corpus: out_dir not set");
  double lo, hi;
  class_band(n_classes - 1, &lo, &hi);
  if (hi * 1.13 >= sample_rate / 2.0)
    throw ConfigError("synth_corpus: top class band exceeds Nyquist; fewer classes or a "
                      "higher sample rate needed");
}

std::vector<ManifestEntry> synth_corpus(const SynthSpec& spec) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(spec.out_dir);
  Rng rng(spec.seed);

  std::vector<CliqueRecipe> recipes(spec.n_cliques);
  for (size_t q = 0; q < spec.n_cliques; ++q) {
    CliqueRecipe& r = recipes[q];
    const size_t n_tags = 1 + rng.index(spec.max_tags_per_track);
    std::vector<size_t> all_classes(spec.n_classes);
    for (size_t c = 0; c < spec.n_classes; ++c) all_classes[c] = c;
    rng.shuffle(all_classes);
    r.classes.assign(all_classes.begin(), all_classes.begin() + n_tags);
    std::sort(r.classes.begin(), r.classes.end());
    for (size_t c : r.classes) {
      const size_t n_partials = 3 + rng.index(3);
      for (size_t k = 0; k < n_partials; ++k)
        r.partials.push_back(Partial{rng.uniform(), rng.uniform(0.3, 1.0), c});
    }
    for (int band = 0; band < 3; ++band) {
      FingerprintBand fp;
      fp.center_hz = 500.0 * std::pow(5600.0 / 500.0, rng.uniform());
      for (int s = 0; s < 12; ++s) fp.ratios.push_back(rng.uniform(0.87, 1.15));
      r.fingerprint.push_back(std::move(fp));
    }
    r.env_rate_hz = rng.uniform(0.25, 2.0);
    r.env_depth = rng.uniform(0.3, 0.8);
  }

  std::vector<ManifestEntry> entries;
  entries.reserve(spec.n_tracks);
  for (size_t i = 0; i < spec.n_tracks; ++i) {
    const size_t q = i % spec.n_cliques;
    const bool is_base = i < spec.n_cliques;  // first pass over cliques = base renders
    const double pitch =
        is_base ? 1.0 : std::pow(2.0, rng.uniform(-2.0, 2.0) / 12.0);
    const double stretch = is_base ? 1.0 : rng.uniform(0.9, 1.11);
    const double gain = is_base ? 1.0 : std::pow(10.0, rng.uniform(-6.0, 0.0) / 20.0);

    AudioBuffer buf;
    buf.sample_rate = spec.sample_rate;
    buf.samples = render_member(recipes[q], spec, pitch, stretch, gain, rng);

    char name[64];
    std::snprintf(name, sizeof(name), "track_%04zu.wav", i);
    const std::string path = (fs::path(spec.out_dir) / name).string();
    write_wav(path, buf);

    ManifestEntry e;
    e.path = path;
    for (size_t c : recipes[q].classes) e.tags.push_back("class" + std::to_string(c));
    char cq[32];
    std::snprintf(cq, sizeof(cq), "clique_%03zu", q);
    e.clique = cq;
    entries.push_back(std::move(e));
  }

  // manifest stores paths relative to its own directory
  std::vector<ManifestEntry> rel = entries;
  for (auto& e : rel) e.path = fs::path(e.path).filename().string();
  write_manifest((fs::path(spec.out_dir) / "manifest.tsv").string(), rel);
  return entries;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_manifest: cannot open " + path);
  namespace fs = std::filesystem;
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw ParseError("load_manifest: " + path + ":" + std::to_string(lineno) +
                       ": expected track_path<TAB>tags<TAB>clique_id");
    ManifestEntry e;
    std::string raw = line.substr(0, t1);
    e.path = fs::path(raw).is_absolute() ? raw : (base / raw).string();
    const std::string tags = line.substr(t1 + 1, t2 - t1 - 1);
    size_t pos = 0;
    while (pos <= tags.size() && !tags.empty()) {
      const size_t comma = tags.find(',', pos);
      const std::string tag = tags.substr(pos, comma == std::string::npos ? comma : comma - pos);
      if (!tag.empty()) e.tags.push_back(tag);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    e.clique = line.substr(t2 + 1);
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("write_manifest: cannot open " + path + " for writing");
  for (const auto& e : entries) {
    out << e.path << '\t';
    for (size_t i = 0; i < e.tags.size(); ++i) {
      if (i) out << ',';
      out << e.tags[i];
    }
    out << '\t' << e.clique << '\n';
  }
  if (!out) throw IoError("write_manifest: write failed for " + path);
}

std::vector<std::string> collect_tags(const std::vector<ManifestEntry>& entries) {
  std::vector<std::string> tags;
  for (const auto& e : entries)
    for (const auto& t : e.tags)
      if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
  return tags;
}

}  // namespace mart::dsp
