#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mart/tensor.hpp"

namespace mart::diff {

// Ordered list of named tensors: trainable parameters plus non-optimized
// state (batchnorm running stats). Order is the checkpoint record order and
// the Adam slot order, so registration must be deterministic.
template <class R>
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor<R>*>> trainable;
  std::vector<std::pair<std::string, Tensor<R>*>> state;

  void add(const std::string& name, Tensor<R>* t) { trainable.emplace_back(name, t); }
  void add_state(const std::string& name, Tensor<R>* t) { state.emplace_back(name, t); }

  void watch_all(Tape<R>& tape) {
    for (auto& [name, t] : trainable) tape.watch(*t);
  }

  void detach_all() {
    for (auto& [name, t] : trainable) t->detach();
    for (auto& [name, t] : state) t->detach();
  }

  std::vector<Tensor<R>*> trainable_ptrs() const {
    std::vector<Tensor<R>*> out;
    out.reserve(trainable.size());
    for (auto& [name, t] : trainable) out.push_back(t);
    return out;
  }

  size_t total_trainable_values() const {
    size_t n = 0;
    for (auto& [name, t] : trainable) n += t->size();
    return n;
  }
};

}  // namespace mart::diff
