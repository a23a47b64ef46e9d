#include "mart/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mart/loss.hpp"
#include "mart/spectrogram.hpp"

namespace mart::train {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value '" + v + "' for key " + key);
  }
}

size_t parse_size(const std::string& v, const std::string& key) {
  const double d = parse_double(v, key);
  if (d < 0 || d != static_cast<double>(static_cast<size_t>(d)))
    throw ConfigError("config: expected a non-negative integer for key " + key);
  return static_cast<size_t>(d);
}

std::vector<double> parse_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  size_t pos = 0;
  while (pos <= v.size()) {
    size_t comma = v.find(',', pos);
    const std::string item = trim(v.substr(pos, comma == std::string::npos ? comma : comma - pos));
    if (!item.empty()) out.push_back(parse_double(item, key));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw ConfigError("config: empty list for key " + key);
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt_double(v[i]);
  }
  return out;
}

std::vector<double> broadcast(const std::vector<double>& v, size_t n, const char* key) {
  if (v.size() == n) return v;
  if (v.size() == 1) return std::vector<double>(n, v[0]);
  throw ConfigError(std::string("config: ") + key + " needs 1 or " + std::to_string(n) +
                    " values, got " + std::to_string(v.size()));
}

}  // namespace

std::vector<double> TrainConfig::lambda_down_full() const {
  return broadcast(lambda_down, n - 1, "lambda_down");
}

std::vector<double> TrainConfig::lambda_up_full() const {
  return broadcast(lambda_up, n - 1, "lambda_up");
}

void TrainConfig::validate() const {
  if (m < 2) throw ConfigError("config: m must be >= 2");
  if (n < 2) throw ConfigError("config: n must be >= 2");
  if (sample_rate <= 0) throw ConfigError("config: sample_rate must be positive");
  if (root_seconds <= 0) throw ConfigError("config: root_seconds must be positive");
  if (frames < 2) throw ConfigError("config: frames must be >= 2");
  if (d_e < 4) throw ConfigError("config: d_e must be >= 4");
  if (d_t == 0 || heads == 0 || d_t % heads != 0)
    throw ConfigError("config: d_t must be a positive multiple of heads");
  if (blocks == 0) throw ConfigError("config: blocks must be >= 1");
  if (contrastive_dim == 0) throw ConfigError("config: contrastive_dim must be >= 1");
  if (tau <= 0) throw ConfigError("config: tau must be positive");
  if (batch < 1) throw ConfigError("config: batch must be >= 1");
  if (lr <= 0) throw ConfigError("config: lr must be positive");
  if (weight_decay < 0) throw ConfigError("config: weight_decay must be >= 0");
  if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
  loss::parse_ablation(ablation);
  lambda_down_full();
  lambda_up_full();
  aug.validate();

  long leaves = 1;
  for (size_t i = 0; i + 1 < n; ++i) leaves *= static_cast<long>(m);
  const long min_root = leaves * static_cast<long>(dsp::logmel_min_span(frames));
  if (root_samples() < min_root)
    throw ConfigError("config: root of " + std::to_string(root_samples()) +
                      " samples cannot host M^" + std::to_string(n - 1) + " leaves of " +
                      std::to_string(dsp::logmel_min_span(frames)) + "+ samples; need >= " +
                      std::to_string(min_root));
}

TrainConfig TrainConfig::desk_profile() {
  TrainConfig cfg;
  cfg.d_e = 64;
  cfg.d_t = 24;
  cfg.frames = 32;
  cfg.batch = 8;
  cfg.epochs = 20;
  return cfg;
}

void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "m")
    cfg.m = parse_size(value, key);
  else if (key == "n")
    cfg.n = parse_size(value, key);
  else if (key == "sample_rate")
    cfg.sample_rate = static_cast<int>(parse_size(value, key));
  else if (key == "root_seconds")
    cfg.root_seconds = parse_double(value, key);
  else if (key == "frames")
    cfg.frames = parse_size(value, key);
  else if (key == "d_e")
    cfg.d_e = parse_size(value, key);
  else if (key == "d_t")
    cfg.d_t = parse_size(value, key);
  else if (key == "heads")
    cfg.heads = parse_size(value, key);
  else if (key == "blocks")
    cfg.blocks = parse_size(value, key);
  else if (key == "contrastive_dim")
    cfg.contrastive_dim = parse_size(value, key);
  else if (key == "tau")
    cfg.tau = parse_double(value, key);
  else if (key == "lambda_down")
    cfg.lambda_down = parse_list(value, key);
  else if (key == "lambda_up")
    cfg.lambda_up = parse_list(value, key);
  else if (key == "batch")
    cfg.batch = parse_size(value, key);
  else if (key == "lr")
    cfg.lr = parse_double(value, key);
  else if (key == "weight_decay")
    cfg.weight_decay = parse_double(value, key);
  else if (key == "epochs")
    cfg.epochs = parse_size(value, key);
  else if (key == "seed")
    cfg.seed = static_cast<uint64_t>(parse_size(value, key));
  else if (key == "ablation")
    cfg.ablation = value;
  else if (key == "manifest")
    cfg.manifest = value;
  else if (key == "checkpoint_dir")
    cfg.checkpoint_dir = value;
  else
    throw ConfigError("config: unknown key '" + key + "'");
}

TrainConfig parse_config_text(const std::string& text, const std::string& origin) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + origin + ":" + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    apply_config_entry(cfg, key, value);
  }
  return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "m = " << cfg.m << "\n";
  out << "n = " << cfg.n << "\n";
  out << "sample_rate = " << cfg.sample_rate << "\n";
  out << "root_seconds = " << fmt_double(cfg.root_seconds) << "\n";
  out << "frames = " << cfg.frames << "\n";
  out << "d_e = " << cfg.d_e << "\n";
  out << "d_t = " << cfg.d_t << "\n";
  out << "heads = " << cfg.heads << "\n";
  out << "blocks = " << cfg.blocks << "\n";
  out << "contrastive_dim = " << cfg.contrastive_dim << "\n";
  out << "tau = " << fmt_double(cfg.tau) << "\n";
  out << "lambda_down = " << fmt_list(cfg.lambda_down) << "\n";
  out << "lambda_up = " << fmt_list(cfg.lambda_up) << "\n";
  out << "batch = " << cfg.batch << "\n";
  out << "lr = " << fmt_double(cfg.lr) << "\n";
  out << "weight_decay = " << fmt_double(cfg.weight_decay) << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "ablation = " << cfg.ablation << "\n";
  out << "manifest = " << cfg.manifest << "\n";
  out << "checkpoint_dir = " << cfg.checkpoint_dir << "\n";
  return out.str();
}

}  // namespace mart::train
