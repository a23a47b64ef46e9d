#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mart/trainer.hpp"

using namespace mart;
using namespace mart::train;

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "mart_train_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

// tiny synthetic corpus + matching config for fast loop tests
TrainConfig tiny_config(const std::string& tag, uint64_t seed = 3,
                        const std::string& ablation = "full") {
  static std::string corpus_dir;
  if (corpus_dir.empty()) {
    dsp::SynthSpec spec;
    spec.n_tracks = 16;
    spec.n_classes = 2;
    spec.n_cliques = 4;
    spec.seconds = 1.0;
    spec.seed = 11;
    spec.out_dir = fresh_dir("corpus");
    dsp::synth_corpus(spec);
    corpus_dir = spec.out_dir;
  }
  TrainConfig cfg;
  cfg.d_e = 8;
  cfg.d_t = 6;
  cfg.frames = 8;
  cfg.contrastive_dim = 16;
  cfg.root_seconds = 0.5;
  cfg.batch = 4;
  cfg.epochs = 2;
  cfg.seed = seed;
  cfg.ablation = ablation;
  cfg.manifest = corpus_dir + "/manifest.tsv";
  cfg.checkpoint_dir = fresh_dir(tag);
  return cfg;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config file parse, overrides, serialization round-trip") {
  TrainConfig cfg = TrainConfig::desk_profile();
  cfg.manifest = "/tmp/m.tsv";
  cfg.checkpoint_dir = "/tmp/ckpt";
  cfg.lambda_down = {0.5, 1.0, 0.25};
  const std::string text = serialize_config(cfg);
  TrainConfig back = parse_config_text(text, "round-trip");
  CHECK(serialize_config(back) == text);
  CHECK(back.d_e == 64);
  CHECK(back.d_t == 24);
  CHECK(back.frames == 32);
  CHECK(back.batch == 8);
  CHECK(back.lambda_down == cfg.lambda_down);

  apply_config_entry(back, "lr", "0.001");
  CHECK(back.lr == doctest::Approx(0.001));
  CHECK_THROWS_AS(apply_config_entry(back, "bogus_key", "1"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("lr 0.1\n", "bad"), ConfigError);

  TrainConfig invalid = TrainConfig::desk_profile();
  invalid.d_t = 25;  // not divisible by 3 heads
  CHECK_THROWS_AS(invalid.validate(), ConfigError);
  TrainConfig too_short = TrainConfig::desk_profile();
  too_short.root_seconds = 0.01;
  CHECK_THROWS_AS(too_short.validate(), ConfigError);

  // lambda broadcast: single value expands to n-1 entries
  TrainConfig bc = TrainConfig::desk_profile();
  CHECK(bc.lambda_down_full() == std::vector<double>(3, 1.0));
  bc.lambda_down = {1.0, 2.0};
  CHECK_THROWS_AS(bc.lambda_down_full(), ConfigError);
}

TEST_CASE("fit_to_root crops and cyclically pads") {
  dsp::AudioBuffer w;
  w.sample_rate = 100;
  w.samples = {1, 2, 3, 4, 5};
  dsp::AudioBuffer cropped = fit_to_root(w, 3, 1);
  CHECK(cropped.samples == std::vector<float>({2, 3, 4}));
  dsp::AudioBuffer padded = fit_to_root(w, 8, 0);
  CHECK(padded.samples == std::vector<float>({1, 2, 3, 4, 5, 1, 2, 3}));
}

TEST_CASE("checkpoint save/load round trip is byte-identical") {
  const std::string dir = fresh_dir("ckpt_roundtrip");
  CheckpointData data;
  data.config_text = serialize_config(TrainConfig::desk_profile());
  data.rng_state = Rng(7).save_state();
  data.step = 42;
  data.epoch = 3;
  data.adam_step = 42;
  Rng rng(5);
  for (int i = 0; i < 3; ++i) {
    std::vector<float> v(10);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    data.tensors.emplace_back("param/p" + std::to_string(i),
                              diff::Tensor<float>(diff::Shape{2, 5}, std::move(v)));
  }
  const std::string p1 = dir + "/a.martckpt";
  const std::string p2 = dir + "/b.martckpt";
  save_checkpoint(p1, data);
  CheckpointData loaded = load_checkpoint(p1);
  CHECK(loaded.config_text == data.config_text);
  CHECK(loaded.rng_state == data.rng_state);
  CHECK(loaded.step == 42);
  CHECK(loaded.epoch == 3);
  REQUIRE(loaded.tensors.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(loaded.tensors[i].first == data.tensors[i].first);
    CHECK(*loaded.tensors[i].second.data == *data.tensors[i].second.data);  // bitwise
    CHECK(loaded.tensors[i].second.shape == data.tensors[i].second.shape);
  }
  save_checkpoint(p2, loaded);
  CHECK(read_bytes(p1) == read_bytes(p2));

  // truncation -> error, no partial state
  auto bytes = read_bytes(p1);
  std::ofstream cut(dir + "/cut.martckpt", std::ios::binary);
  cut.write(bytes.data(), bytes.size() - 7);
  cut.close();
  CHECK_THROWS_AS(load_checkpoint(dir + "/cut.martckpt"), ParseError);

  // foreign magic -> rejected
  std::ofstream foreign(dir + "/foreign.martckpt", std::ios::binary);
  foreign << "NOTMARTXrest of the file";
  foreign.close();
  CHECK_THROWS_AS(load_checkpoint(dir + "/foreign.martckpt"), ParseError);

  // version mismatch -> rejected
  auto versioned = bytes;
  versioned[8] = 99;  // format version lives right after the magic
  std::ofstream vf(dir + "/version.martckpt", std::ios::binary);
  vf.write(versioned.data(), versioned.size());
  vf.close();
  CHECK_THROWS_AS(load_checkpoint(dir + "/version.martckpt"), ParseError);
}

TEST_CASE("train_step is deterministic and honors ablation wiring") {
  TrainConfig cfg = tiny_config("det_a");
  Corpus corpus = Corpus::load(cfg.manifest);
  std::vector<dsp::AudioBuffer> batch;
  for (size_t i = 0; i < cfg.batch; ++i)
    batch.push_back(fit_to_root(corpus.waves[i], cfg.root_samples(), 0));

  Trainer a(cfg);
  Trainer b(cfg);
  auto ra = a.train_step(batch);
  auto rb = b.train_step(batch);
  CHECK(ra.mean_lhc == rb.mean_lhc);  // bitwise
  for (size_t i = 0; i < ra.lhc.size(); ++i) CHECK(ra.lhc[i] == rb.lhc[i]);
  CHECK(a.attention_calls() > 0);
  CHECK(Trainer::log_line(1, 1, ra) == Trainer::log_line(1, 1, rb));

  // no_pwt never invokes attention
  TrainConfig cfg_np = tiny_config("det_np");
  cfg_np.ablation = "no_pwt";
  Trainer c(cfg_np);
  c.train_step(batch);
  CHECK(c.attention_calls() == 0);

  // wrong waveform length is rejected
  std::vector<dsp::AudioBuffer> bad = batch;
  bad[0].samples.resize(bad[0].samples.size() - 1);
  CHECK_THROWS_AS(a.train_step(bad), DimensionError);
}

TEST_CASE("no_hcl with zero lambda matches the standalone InfoNCE oracle") {
  TrainConfig cfg = tiny_config("infonce", 17, "no_hcl");
  cfg.lambda_down = {0.0};
  cfg.lambda_up = {0.0};
  Corpus corpus = Corpus::load(cfg.manifest);
  std::vector<dsp::AudioBuffer> batch;
  for (size_t i = 0; i < cfg.batch; ++i)
    batch.push_back(fit_to_root(corpus.waves[i], cfg.root_samples(), 0));

  Trainer t(cfg);
  auto report = t.train_step(batch);
  CHECK(t.attention_calls() == 0);  // zero lambda short-circuits attention

  // replicate the forward with the same rng stream on an identical model
  Trainer twin(cfg);
  loss::ContrastiveBatch<float> vectors;
  for (const auto& wave : batch) {
    Rng r1 = twin.rng().split();
    Rng r2 = twin.rng().split();
    dsp::AudioBuffer v1 = dsp::augment(wave, cfg.aug, r1);
    dsp::AudioBuffer v2 = dsp::augment(wave, cfg.aug, r2);
    vectors.instances.push_back(
        instance_forward<float>(v1, v2, twin.tree(), twin.model(), cfg.frames, true, true));
  }
  // textbook InfoNCE with the same negative set, scalar arithmetic
  auto cos_d = [](const float* a, const float* b, size_t d) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < d; ++i) {
      dot += static_cast<double>(a[i]) * b[i];
      na += static_cast<double>(a[i]) * a[i];
      nb += static_cast<double>(b[i]) * b[i];
    }
    return dot / std::sqrt(na * nb);
  };
  const size_t dim = cfg.contrastive_dim;
  for (size_t b = 0; b < vectors.size(); ++b) {
    const float* hat_b = vectors.instances[b].hat_levels[0].ptr();
    double denom = 0;
    for (size_t u = 0; u < vectors.size(); ++u)
      denom += std::exp(cos_d(hat_b, vectors.instances[u].root_tilde.ptr(), dim) / cfg.tau);
    for (size_t u = 0; u < vectors.size(); ++u) {
      if (u == b) continue;
      denom += std::exp(cos_d(hat_b, vectors.instances[u].hat_levels[0].ptr(), dim) / cfg.tau);
    }
    const double pos = std::exp(cos_d(hat_b, vectors.instances[b].root_tilde.ptr(), dim) / cfg.tau);
    const double oracle = -std::log(pos / denom);
    CHECK(report.lhc[b] == doctest::Approx(oracle).epsilon(1e-4));
  }
}

TEST_CASE("pretrain writes logs and checkpoints; seeded runs reproduce bitwise") {
  TrainConfig cfg1 = tiny_config("repro_a", 23);
  TrainConfig cfg2 = tiny_config("repro_b", 23);
  auto r1 = pretrain(cfg1);
  auto r2 = pretrain(cfg2);
  REQUIRE(!r1.log_lines.empty());
  CHECK(r1.log_lines == r2.log_lines);  // identical text, identical floats

  // epoch count in the log equals cfg.epochs
  const auto logged = read_lines(cfg1.checkpoint_dir + "/loss_log.txt");
  CHECK(logged == r1.log_lines);
  size_t max_epoch = 0;
  for (const auto& line : logged) {
    const size_t at = line.find("epoch=");
    max_epoch = std::max(max_epoch, static_cast<size_t>(std::stoul(line.substr(at + 6))));
  }
  CHECK(max_epoch == cfg1.epochs);

  // checkpoints for both epochs exist and the final tensors match across runs
  CHECK(fs::exists(cfg1.checkpoint_dir + "/epoch_0001.martckpt"));
  CHECK(fs::exists(cfg1.checkpoint_dir + "/epoch_0002.martckpt"));
  CheckpointData d1 = load_checkpoint(r1.final_checkpoint);
  CheckpointData d2 = load_checkpoint(r2.final_checkpoint);
  REQUIRE(d1.tensors.size() == d2.tensors.size());
  for (size_t i = 0; i < d1.tensors.size(); ++i) {
    CHECK(d1.tensors[i].first == d2.tensors[i].first);
    CHECK(*d1.tensors[i].second.data == *d2.tensors[i].second.data);
  }
}

TEST_CASE("resume reproduces the unbroken trajectory exactly") {
  TrainConfig cfg_full = tiny_config("unbroken", 29);
  cfg_full.epochs = 4;
  auto full = pretrain(cfg_full);

  // identical settings, stopped after epoch 2, then resumed
  TrainConfig cfg_half = tiny_config("broken", 29);
  cfg_half.epochs = 4;
  Trainer trainer(cfg_half);
  Corpus corpus = Corpus::load(cfg_half.manifest);
  const size_t steps_per_epoch = corpus.entries.size() / cfg_half.batch;
  std::vector<std::string> first_lines;
  for (uint64_t epoch = 1; epoch <= 2; ++epoch) {
    std::vector<size_t> order(corpus.entries.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    trainer.rng().shuffle(order);
    for (size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<dsp::AudioBuffer> batch;
      for (size_t b = 0; b < cfg_half.batch; ++b) {
        const auto& wave = corpus.waves[order[s * cfg_half.batch + b]];
        const long span =
            std::max<long>(static_cast<long>(wave.samples.size()) - cfg_half.root_samples() + 1, 1);
        const long off = static_cast<long>(trainer.rng().index(static_cast<size_t>(span)));
        batch.push_back(fit_to_root(wave, cfg_half.root_samples(), off));
      }
      loss::LossReport report = trainer.train_step(batch);
      first_lines.push_back(Trainer::log_line(trainer.step(), epoch, report));
    }
    trainer.set_epoch(epoch);
  }
  const std::string mid_path = cfg_half.checkpoint_dir + "/epoch_0002.martckpt";
  save_checkpoint(mid_path, trainer.snapshot());

  auto resumed = resume_pretrain(mid_path);
  std::vector<std::string> combined = first_lines;
  combined.insert(combined.end(), resumed.log_lines.begin(), resumed.log_lines.end());
  CHECK(combined == full.log_lines);

  // final parameters bitwise equal to the unbroken run
  CheckpointData du = load_checkpoint(full.final_checkpoint);
  CheckpointData dr = load_checkpoint(resumed.final_checkpoint);
  REQUIRE(du.tensors.size() == dr.tensors.size());
  for (size_t i = 0; i < du.tensors.size(); ++i)
    CHECK(*du.tensors[i].second.data == *dr.tensors[i].second.data);
  CHECK(du.rng_state == dr.rng_state);
}

TEST_CASE("checkpoint restore round trip through a live trainer") {
  TrainConfig cfg = tiny_config("live_restore", 31);
  Trainer t(cfg);
  Corpus corpus = Corpus::load(cfg.manifest);
  std::vector<dsp::AudioBuffer> batch;
  for (size_t i = 0; i < cfg.batch; ++i)
    batch.push_back(fit_to_root(corpus.waves[i], cfg.root_samples(), 0));
  t.train_step(batch);
  const std::string path = cfg.checkpoint_dir + "/snap.martckpt";
  save_checkpoint(path, t.snapshot());

  auto t2 = trainer_from_checkpoint(path);
  CHECK(t2->step() == t.step());
  // identical next step on both
  auto ra = t.train_step(batch);
  auto rb = t2->train_step(batch);
  CHECK(ra.mean_lhc == rb.mean_lhc);

  // save -> load -> save byte identity
  const std::string p2 = cfg.checkpoint_dir + "/snap2.martckpt";
  save_checkpoint(p2, load_checkpoint(path));
  CHECK(read_bytes(path) == read_bytes(p2));
}

TEST_CASE("a short run shows a learning signal on the tiny corpus") {
  TrainConfig cfg = tiny_config("learning", 37);
  cfg.epochs = 13;  // 4 steps/epoch -> 52 steps
  auto result = pretrain(cfg);
  REQUIRE(result.log_lines.size() >= 50);
  auto loss_of = [](const std::string& line) {
    const size_t at = line.find("lhc=");
    return std::stod(line.substr(at + 4));
  };
  double first = 0, last = 0;
  for (size_t i = 0; i < 10; ++i) {
    first += loss_of(result.log_lines[i]);
    last += loss_of(result.log_lines[result.log_lines.size() - 10 + i]);
  }
  CHECK(last / 10.0 < first / 10.0);  // any strict decrease passes
}
