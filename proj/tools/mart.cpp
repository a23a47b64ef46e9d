// Command-line entry point for the hierarchical music representation
// pipeline: cropping, spectrograms, the synthetic corpus, pretraining,
// embedding extraction, probing, retrieval and the numeric self-checks.
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mart/evaluate.hpp"
#include "mart/selftest.hpp"
#include "mart/trainer.hpp"

namespace {

using namespace mart;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::ostream& open_out(std::ofstream& file, const std::string& path) {
  if (path.empty()) return std::cout;
  file.open(path);
  if (!file) throw IoError("cannot open output file " + path);
  return file;
}

int cmd_crop(long len, size_t m, size_t n, long min_leaf, const std::string& out_path) {
  hac::ClipTree tree = hac::build_tree(len, m, n, min_leaf);
  std::ofstream file;
  std::ostream& out = open_out(file, out_path);
  for (const auto& level : tree.levels)
    for (const auto& node : level)
      out << node.level << '\t' << node.index << '\t' << node.start << '\t' << node.end << '\n';
  return kExitOk;
}

int cmd_spec(const std::string& in, size_t frames, long start, long end,
             const std::string& out_path) {
  dsp::AudioBuffer buf = dsp::load_wav(in);
  if (end <= 0) end = static_cast<long>(buf.samples.size());
  dsp::LogMelSpec spec = dsp::logmel_for_clip(buf, start, end, frames);
  std::ofstream file;
  std::ostream& out = open_out(file, out_path);
  out << spec.mel_bands << ' ' << spec.frames << '\n';
  char cell[32];
  for (size_t mb = 0; mb < spec.mel_bands; ++mb) {
    for (size_t t = 0; t < spec.frames; ++t) {
      std::snprintf(cell, sizeof(cell), "%.6g", spec.at(mb, t));
      out << cell << (t + 1 == spec.frames ? '\n' : ' ');
    }
  }
  return kExitOk;
}

int cmd_synth(const dsp::SynthSpec& spec) {
  auto entries = dsp::synth_corpus(spec);
  std::cout << "wrote " << entries.size() << " tracks and manifest.tsv to " << spec.out_dir
            << "\n";
  return kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::string& resume,
                 const std::vector<std::string>& overrides, bool quiet) {
  train::PretrainResult result;
  if (!resume.empty()) {
    if (!overrides.empty() || !config_path.empty())
      throw ConfigError("pretrain: --resume uses the checkpoint's own config; drop --config/--set");
    result = train::resume_pretrain(resume, quiet ? nullptr : &std::cout);
  } else {
    train::TrainConfig cfg = config_path.empty() ? train::TrainConfig::desk_profile()
                                                 : train::parse_config_file(config_path);
    for (const std::string& kv : overrides) {
      const size_t eq = kv.find('=');
      if (eq == std::string::npos)
        throw ConfigError("pretrain: --set expects key=value, got '" + kv + "'");
      train::apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    result = train::pretrain(cfg, quiet ? nullptr : &std::cout);
  }
  std::cout << "final checkpoint: " << result.final_checkpoint << "\n";
  return kExitOk;
}

int cmd_embed(const std::string& ckpt, const std::string& manifest, const std::string& out) {
  auto trainer = train::trainer_from_checkpoint(ckpt);
  auto entries = dsp::load_manifest(manifest);
  eval::EmbeddingSet set;
  set.dim = trainer->config().d_e;
  for (const auto& e : entries) {
    dsp::AudioBuffer wave = dsp::load_wav(e.path);
    set.rows.emplace_back(std::filesystem::path(e.path).filename().string(),
                          trainer->embed(wave));
  }
  eval::write_embeddings(out, set);
  std::cout << "wrote " << set.rows.size() << " embeddings of dim " << set.dim << " to " << out
            << "\n";
  return kExitOk;
}

int cmd_probe(const std::string& emb_path, const std::string& manifest, uint64_t seed,
              size_t epochs, size_t patience, double train_frac, double val_frac) {
  eval::EmbeddingSet set = eval::read_embeddings(emb_path);
  auto entries = dsp::load_manifest(manifest);
  if (entries.size() != set.rows.size())
    throw DimensionError("probe: manifest has " + std::to_string(entries.size()) +
                         " tracks but embeddings have " + std::to_string(set.rows.size()));
  std::vector<std::vector<std::string>> tags;
  for (const auto& e : entries) tags.push_back(e.tags);
  eval::ProbeSplit split;
  split.seed = seed;
  split.train_fraction = train_frac;
  split.val_fraction = val_frac;
  eval::ProbeResult r = eval::linear_probe(set, tags, split, epochs, patience);
  std::printf("roc_auc\t%.6f\ttest\tseed=%llu\n", r.roc_auc,
              static_cast<unsigned long long>(seed));
  std::printf("pr_auc\t%.6f\ttest\tseed=%llu\n", r.pr_auc,
              static_cast<unsigned long long>(seed));
  return kExitOk;
}

int cmd_retrieve(const std::string& emb_path, const std::string& manifest, uint64_t seed) {
  eval::EmbeddingSet set = eval::read_embeddings(emb_path);
  auto entries = dsp::load_manifest(manifest);
  if (entries.size() != set.rows.size())
    throw DimensionError("retrieve: manifest/embedding size mismatch");
  std::vector<std::string> cliques;
  for (const auto& e : entries) cliques.push_back(e.clique);
  eval::RetrievalMetrics m = eval::retrieval_eval(set, cliques);
  std::printf("map\t%.6f\tall\tseed=%llu\n", m.map, static_cast<unsigned long long>(seed));
  std::printf("p_at_10\t%.6f\tall\tseed=%llu\n", m.p_at_10,
              static_cast<unsigned long long>(seed));
  std::printf("mr1\t%.6f\tall\tseed=%llu\n", m.mr1, static_cast<unsigned long long>(seed));
  return kExitOk;
}

int cmd_gradcheck(const std::string& profile_name, double tolerance, double h, uint64_t seed) {
  train::GradcheckProfile profile;
  if (profile_name == "tiny") {
    profile.blocks = 1;
    profile.n = 2;
    profile.frames = 8;
  } else if (profile_name != "desk") {
    throw ConfigError("gradcheck: profile must be desk or tiny");
  }
  profile.tolerance = tolerance;
  profile.h = h;
  profile.seed = seed;
  diff::GradCheckReport rep = train::full_model_gradcheck(profile);
  std::printf("checked %zu parameter values\n", rep.checked);
  std::printf("max relative error %.3e (tolerance %.1e) at %s[%zu]\n", rep.max_rel_error,
              rep.tolerance, rep.worst_param.c_str(), rep.worst_index);
  std::printf("analytic %.9e vs central-difference %.9e\n", rep.worst_analytic,
              rep.worst_numeric);
  std::printf("%s\n", rep.passed ? "PASS" : "FAIL");
  return rep.passed ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical music representation pipeline"};
  app.require_subcommand(1);

  auto* crop = app.add_subcommand("crop", "print the clip tree of a root span");
  long crop_len = 0;
  size_t crop_m = 2, crop_n = 4;
  long crop_min_leaf = 1;
  std::string crop_out;
  crop->add_option("--len", crop_len, "root length in samples")->required();
  crop->add_option("--m", crop_m, "branching factor");
  crop->add_option("--n", crop_n, "hierarchy levels");
  crop->add_option("--min-leaf", crop_min_leaf, "minimum leaf length");
  crop->add_option("--out", crop_out, "output path (default stdout)");

  auto* spec_cmd = app.add_subcommand("spec", "write the log-mel matrix of a wav span");
  std::string spec_in, spec_out;
  size_t spec_frames = 128;
  long spec_start = 0, spec_end = 0;
  spec_cmd->add_option("--in", spec_in, "input wav")->required();
  spec_cmd->add_option("--frames", spec_frames, "target frame count");
  spec_cmd->add_option("--start", spec_start, "span start sample");
  spec_cmd->add_option("--end", spec_end, "span end sample (default: track end)");
  spec_cmd->add_option("--out", spec_out, "output path (default stdout)");

  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");
  dsp::SynthSpec synth_spec;
  synth->add_option("--out", synth_spec.out_dir, "output directory")->required();
  synth->add_option("--tracks", synth_spec.n_tracks, "track count");
  synth->add_option("--classes", synth_spec.n_classes, "tag class count");
  synth->add_option("--cliques", synth_spec.n_cliques, "cover clique count");
  synth->add_option("--tags-per-track", synth_spec.max_tags_per_track, "max tags per track");
  synth->add_option("--sr", synth_spec.sample_rate, "sample rate");
  synth->add_option("--seconds", synth_spec.seconds, "track duration");
  synth->add_option("--seed", synth_spec.seed, "generator seed");

  auto* pre = app.add_subcommand("pretrain", "run contrastive pretraining");
  std::string pre_config, pre_resume;
  std::vector<std::string> pre_overrides;
  bool pre_quiet = false;
  pre->add_option("--config", pre_config, "config file (key = value lines)");
  pre->add_option("--resume", pre_resume, "checkpoint to continue from");
  pre->add_option("--set", pre_overrides, "config override key=value (repeatable)");
  pre->add_flag("--quiet", pre_quiet, "suppress per-step loss lines");

  auto* embed = app.add_subcommand("embed", "extract track embeddings");
  std::string embed_ckpt, embed_manifest, embed_out;
  embed->add_option("--checkpoint", embed_ckpt, "model checkpoint")->required();
  embed->add_option("--manifest", embed_manifest, "corpus manifest")->required();
  embed->add_option("--out", embed_out, "output embeddings file")->required();

  auto* probe = app.add_subcommand("probe", "linear probe on frozen embeddings");
  std::string probe_emb, probe_manifest;
  uint64_t probe_seed = 0;
  size_t probe_epochs = 200, probe_patience = 10;
  double probe_train = 0.6, probe_val = 0.2;
  probe->add_option("--embeddings", probe_emb, "embeddings file")->required();
  probe->add_option("--manifest", probe_manifest, "corpus manifest")->required();
  probe->add_option("--seed", probe_seed, "split seed");
  probe->add_option("--epochs", probe_epochs, "max probe epochs");
  probe->add_option("--patience", probe_patience, "early-stop patience");
  probe->add_option("--train-frac", probe_train, "train fraction");
  probe->add_option("--val-frac", probe_val, "validation fraction");

  auto* retrieve = app.add_subcommand("retrieve", "cover-clique retrieval metrics");
  std::string ret_emb, ret_manifest;
  uint64_t ret_seed = 0;
  retrieve->add_option("--embeddings", ret_emb, "embeddings file")->required();
  retrieve->add_option("--manifest", ret_manifest, "corpus manifest")->required();
  retrieve->add_option("--seed", ret_seed, "reported seed tag");

  auto* gc = app.add_subcommand("gradcheck", "64-bit full-model finite-difference check");
  std::string gc_profile = "desk";
  double gc_tol = 1e-4, gc_h = 1e-5;
  uint64_t gc_seed = 5;
  gc->add_option("--profile", gc_profile, "desk or tiny");
  gc->add_option("--tolerance", gc_tol, "max relative error accepted");
  gc->add_option("--fd-step", gc_h, "finite-difference step h");
  gc->add_option("--seed", gc_seed, "input seed");

  app.add_subcommand("selftest", "run the built-in example assertions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints usage or help text
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (crop->parsed()) return cmd_crop(crop_len, crop_m, crop_n, crop_min_leaf, crop_out);
    if (spec_cmd->parsed()) return cmd_spec(spec_in, spec_frames, spec_start, spec_end, spec_out);
    if (synth->parsed()) return cmd_synth(synth_spec);
    if (pre->parsed()) return cmd_pretrain(pre_config, pre_resume, pre_overrides, pre_quiet);
    if (embed->parsed()) return cmd_embed(embed_ckpt, embed_manifest, embed_out);
    if (probe->parsed())
      return cmd_probe(probe_emb, probe_manifest, probe_seed, probe_epochs, probe_patience,
                       probe_train, probe_val);
    if (retrieve->parsed()) return cmd_retrieve(ret_emb, ret_manifest, ret_seed);
    if (gc->parsed()) return cmd_gradcheck(gc_profile, gc_tol, gc_h, gc_seed);
    if (app.get_subcommand("selftest")->parsed())
      return selftest::run_all(std::cout) ? kExitOk : kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
