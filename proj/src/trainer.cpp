#include "mart/trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mart/audio.hpp"

namespace mart::train {

namespace fs = std::filesystem;

Corpus Corpus::load(const std::string& manifest_path) {
  Corpus c;
  c.entries = dsp::load_manifest(manifest_path);
  if (c.entries.empty()) throw IoError("corpus: empty manifest " + manifest_path);
  c.waves.reserve(c.entries.size());
  for (const auto& e : c.entries) c.waves.push_back(dsp::load_wav(e.path));
  return c;
}

dsp::AudioBuffer fit_to_root(const dsp::AudioBuffer& wave, long root_len, long offset) {
  dsp::AudioBuffer out;
  out.sample_rate = wave.sample_rate;
  out.samples.resize(root_len);
  const long n = static_cast<long>(wave.samples.size());
  if (n >= root_len) {
    offset = std::min(offset, n - root_len);
    for (long i = 0; i < root_len; ++i) out.samples[i] = wave.samples[offset + i];
  } else {
    for (long i = 0; i < root_len; ++i) out.samples[i] = wave.samples[i % n];
  }
  return out;
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg),
      tree_(hac::build_tree(cfg.root_samples(), cfg.m, cfg.n,
                            static_cast<long>(dsp::logmel_min_span(cfg.frames)))),
      model_(),
      rng_(cfg.seed),
      mode_(loss::parse_ablation(cfg.ablation)) {
  cfg_.validate();
  Rng init_rng = rng_.split();
  model_ = model::MartModel<float>::init(cfg.d_e, cfg.d_t, cfg.heads, cfg.blocks, cfg.m, cfg.n,
                                         cfg.contrastive_dim, cfg.lambda_down_full(),
                                         cfg.lambda_up_full(), init_rng);
  model_.register_params(registry_);
  adam_.learning_rate = static_cast<float>(cfg.lr);
  adam_.weight_decay = static_cast<float>(cfg.weight_decay);
  adam_.init(registry_.trainable_ptrs());
}

loss::LossReport Trainer::train_step(const std::vector<dsp::AudioBuffer>& batch) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  const long root_len = cfg_.root_samples();
  for (const auto& w : batch)
    if (static_cast<long>(w.samples.size()) != root_len)
      throw DimensionError("train_step: waveform of " + std::to_string(w.samples.size()) +
                           " samples, expected exactly " + std::to_string(root_len));

  const bool use_pwt = loss::uses_pwt_stack(mode_);
  const bool include_pw = loss::uses_part_whole_terms(mode_);

  diff::Tape<float> tape;
  registry_.watch_all(tape);

  loss::ContrastiveBatch<float> vectors;
  for (const auto& wave : batch) {
    Rng aug_rng1 = rng_.split();
    Rng aug_rng2 = rng_.split();
    dsp::AudioBuffer view1 = dsp::augment(wave, cfg_.aug, aug_rng1);
    dsp::AudioBuffer view2 = dsp::augment(wave, cfg_.aug, aug_rng2);
    vectors.instances.push_back(instance_forward<float>(view1, view2, tree_, model_,
                                                        cfg_.frames, true, use_pwt, &attn_));
  }

  loss::LossReport report;
  diff::Tensor<float> batch_loss;
  try {
    auto [lt, rep] = loss::hierarchical_loss(vectors, static_cast<float>(cfg_.tau), include_pw);
    batch_loss = lt;
    report = rep;
  } catch (const NumericError& e) {
    registry_.detach_all();
    throw NumericError(std::string(e.what()) + " (step " + std::to_string(step_) + ", seed " +
                       std::to_string(cfg_.seed) + ")");
  }

  tape.backward(batch_loss);
  std::vector<diff::Tensor<float>*> params = registry_.trainable_ptrs();
  std::vector<const std::vector<float>*> grads;
  grads.reserve(params.size());
  for (auto* p : params) grads.push_back(&tape.grad(*p));
  diff::adam_step(params, grads, adam_);
  registry_.detach_all();
  step_ += 1;
  return report;
}

std::string Trainer::log_line(uint64_t step, uint64_t epoch, const loss::LossReport& report) {
  char buf[160];
  std::string line;
  std::snprintf(buf, sizeof(buf), "step=%llu\tepoch=%llu\tlhc=%.9g\tlpw=%.9g",
                static_cast<unsigned long long>(step), static_cast<unsigned long long>(epoch),
                report.mean_lhc, report.mean_lpw);
  line = buf;
  for (size_t i = 0; i < report.pair_partials_mean.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "\tpair%zu=%.9g", i, report.pair_partials_mean[i]);
    line += buf;
  }
  return line;
}

CheckpointData Trainer::snapshot() const {
  CheckpointData data;
  data.version = kCheckpointVersion;
  data.config_text = serialize_config(cfg_);
  data.rng_state = rng_.save_state();
  data.step = step_;
  data.epoch = epoch_;
  data.adam_step = adam_.step;
  for (size_t i = 0; i < registry_.trainable.size(); ++i) {
    const auto& [name, t] = registry_.trainable[i];
    data.tensors.emplace_back("param/" + name, *t);
    data.tensors.emplace_back(
        "adam/m/" + name, diff::Tensor<float>(t->shape, adam_.first_moment[i]));
    data.tensors.emplace_back(
        "adam/v/" + name, diff::Tensor<float>(t->shape, adam_.second_moment[i]));
  }
  for (const auto& [name, t] : registry_.state) data.tensors.emplace_back("state/" + name, *t);
  return data;
}

void Trainer::restore(const CheckpointData& data) {
  auto copy_into = [&](const std::string& name, diff::Tensor<float>& dst) {
    const diff::Tensor<float>* src = data.find(name);
    if (src == nullptr)
      throw ParseError("restore: checkpoint is missing record '" + name + "'");
    if (src->size() != dst.size())
      throw ParseError("restore: record '" + name + "' has " + std::to_string(src->size()) +
                       " values, expected " + std::to_string(dst.size()));
    *dst.data = *src->data;
  };
  for (size_t i = 0; i < registry_.trainable.size(); ++i) {
    auto& [name, t] = registry_.trainable[i];
    copy_into("param/" + name, *t);
    diff::Tensor<float> m(t->shape, adam_.first_moment[i]);
    copy_into("adam/m/" + name, m);
    adam_.first_moment[i] = *m.data;
    diff::Tensor<float> v(t->shape, adam_.second_moment[i]);
    copy_into("adam/v/" + name, v);
    adam_.second_moment[i] = *v.data;
  }
  for (auto& [name, t] : registry_.state) copy_into("state/" + name, *t);
  adam_.step = data.adam_step;
  rng_.load_state(data.rng_state);
  step_ = data.step;
  epoch_ = data.epoch;
}

std::vector<float> Trainer::embed(const dsp::AudioBuffer& wave) {
  dsp::AudioBuffer fitted = fit_to_root(wave, cfg_.root_samples(), 0);
  return embed_root(fitted, tree_, model_, cfg_.frames, loss::uses_pwt_stack(mode_));
}

namespace {

PretrainResult run_epochs(Trainer& trainer, std::ostream* console) {
  const TrainConfig& cfg = trainer.config();
  if (cfg.manifest.empty()) throw ConfigError("pretrain: no manifest configured");
  if (cfg.checkpoint_dir.empty()) throw ConfigError("pretrain: no checkpoint_dir configured");
  fs::create_directories(cfg.checkpoint_dir);
  Corpus corpus = Corpus::load(cfg.manifest);
  const size_t steps_per_epoch = corpus.entries.size() / cfg.batch;
  if (steps_per_epoch == 0)
    throw ConfigError("pretrain: corpus of " + std::to_string(corpus.entries.size()) +
                      " tracks is smaller than one batch of " + std::to_string(cfg.batch));

  std::ofstream log(fs::path(cfg.checkpoint_dir) / "loss_log.txt", std::ios::app);
  if (!log) throw IoError("pretrain: cannot open loss log in " + cfg.checkpoint_dir);

  PretrainResult result;
  const long root_len = cfg.root_samples();
  for (uint64_t epoch = trainer.epoch() + 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<size_t> order(corpus.entries.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    trainer.rng().shuffle(order);
    for (size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<dsp::AudioBuffer> batch;
      batch.reserve(cfg.batch);
      for (size_t b = 0; b < cfg.batch; ++b) {
        const dsp::AudioBuffer& wave = corpus.waves[order[s * cfg.batch + b]];
        const long n = static_cast<long>(wave.samples.size());
        const long span = std::max<long>(n - root_len + 1, 1);
        const long offset = static_cast<long>(trainer.rng().index(static_cast<size_t>(span)));
        batch.push_back(fit_to_root(wave, root_len, offset));
      }
      loss::LossReport report = trainer.train_step(batch);
      const std::string line = Trainer::log_line(trainer.step(), epoch, report);
      log << line << "\n";
      result.log_lines.push_back(line);
      if (console) (*console) << line << "\n";
    }
    trainer.set_epoch(epoch);
    char name[64];
    std::snprintf(name, sizeof(name), "epoch_%04llu.martckpt",
                  static_cast<unsigned long long>(epoch));
    const std::string path = (fs::path(cfg.checkpoint_dir) / name).string();
    save_checkpoint(path, trainer.snapshot());
    result.final_checkpoint = path;
  }
  log.flush();
  return result;
}

}  // namespace

PretrainResult pretrain(const TrainConfig& cfg, std::ostream* console) {
  Trainer trainer(cfg);
  return run_epochs(trainer, console);
}

PretrainResult resume_pretrain(const std::string& checkpoint_path, std::ostream* console) {
  std::unique_ptr<Trainer> trainer = trainer_from_checkpoint(checkpoint_path);
  return run_epochs(*trainer, console);
}

std::unique_ptr<Trainer> trainer_from_checkpoint(const std::string& path) {
  CheckpointData data = load_checkpoint(path);
  TrainConfig cfg = parse_config_text(data.config_text, path + "#meta/config");
  auto trainer = std::make_unique<Trainer>(cfg);
  trainer->restore(data);
  return trainer;
}

diff::GradCheckReport full_model_gradcheck(const GradcheckProfile& profile) {
  Rng rng(profile.seed);
  std::vector<double> lambda(profile.n - 1, 1.0);
  Rng init_rng = rng.split();
  auto m = model::MartModel<double>::init(profile.d_e, profile.d_t, profile.heads,
                                          profile.blocks, profile.m, profile.n,
                                          profile.contrastive_dim, lambda, lambda, init_rng);
  diff::ParamRegistry<double> reg;
  m.register_params(reg);

  // deterministic root-length test waveforms: tone mixtures plus noise
  const long leaf_len = static_cast<long>(dsp::logmel_min_span(profile.frames)) + 64;
  long root_len = leaf_len;
  for (size_t i = 0; i + 1 < profile.n; ++i) root_len *= static_cast<long>(profile.m);
  hac::ClipTree tree = hac::build_tree(root_len, profile.m, profile.n);
  std::vector<dsp::AudioBuffer> view1(profile.batch), view2(profile.batch);
  for (size_t b = 0; b < profile.batch; ++b) {
    for (auto* view : {&view1[b], &view2[b]}) {
      view->sample_rate = 16000;
      view->samples.resize(root_len);
      const double f1 = rng.uniform(200.0, 3000.0);
      const double f2 = rng.uniform(200.0, 3000.0);
      for (long i = 0; i < root_len; ++i)
        view->samples[i] = static_cast<float>(
            0.4 * std::sin(2.0 * M_PI * f1 * i / 16000.0) +
            0.2 * std::sin(2.0 * M_PI * f2 * i / 16000.0) + 0.02 * rng.normal());
    }
  }

  auto f = [&](diff::Tape<double>* tape) {
    if (tape) reg.watch_all(*tape);
    loss::ContrastiveBatch<double> batch;
    for (size_t b = 0; b < profile.batch; ++b)
      batch.instances.push_back(instance_forward<double>(view1[b], view2[b], tree, m,
                                                         profile.frames, true, true));
    auto [lossT, report] = loss::hierarchical_loss(batch, profile.tau, true);
    return lossT;
  };
  diff::GradCheckReport rep =
      diff::grad_check<double>(reg.trainable, f, profile.h, profile.tolerance);
  reg.detach_all();
  return rep;
}

}  // namespace mart::train
