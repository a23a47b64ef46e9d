#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mart {

// Error taxonomy. The CLI maps these onto exit codes: parse/data -> 2,
// numeric -> 3, everything user-facing at argv level -> 1.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic RNG wrapper. All randomness in the project flows through
// this class so that a (seed, call order) pair fully determines a run.
// Distributions are hand-rolled: the std:: distribution objects are
// implementation-defined and would tie reproducibility to one libstdc++.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. No caching of the second value so the
  // serialized engine state is the complete RNG state.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Uniform integer in [0, n).
  size_t index(size_t n) {
    if (n == 0) throw DomainError("Rng::index: n must be positive");
    return static_cast<size_t>(next_u64() % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Child stream for a sub-task; consumes one draw from this stream.
  Rng split() { return Rng(next_u64()); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string save_state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    if (is.fail()) throw ParseError("Rng::load_state: malformed engine state");
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mart
