#pragma once

#include <cmath>
#include <vector>

#include "mart/tensor.hpp"

namespace mart::diff {

// Adam with decoupled weight decay: the decay shrink is applied to the
// parameter before the moment update, so the moments only ever see the raw
// gradient.
template <class R>
struct AdamState {
  R learning_rate = R(0.0003);
  R weight_decay = R(1e-6);
  R beta1 = R(0.9);
  R beta2 = R(0.999);
  R epsilon = R(1e-8);
  long step = 0;
  std::vector<std::vector<R>> first_moment;
  std::vector<std::vector<R>> second_moment;

  void init(const std::vector<Tensor<R>*>& params) {
    first_moment.clear();
    second_moment.clear();
    for (const Tensor<R>* p : params) {
      first_moment.emplace_back(p->size(), R(0));
      second_moment.emplace_back(p->size(), R(0));
    }
    step = 0;
  }

  bool initialized() const { return !first_moment.empty(); }
};

template <class R>
void adam_step(const std::vector<Tensor<R>*>& params,
               const std::vector<const std::vector<R>*>& grads, AdamState<R>& st) {
  if (!st.initialized()) st.init(params);
  if (params.size() != grads.size() || params.size() != st.first_moment.size())
    throw DimensionError("adam_step: parameter/gradient/state count mismatch");
  st.step += 1;
  const R bc1 = R(1) - std::pow(st.beta1, static_cast<R>(st.step));
  const R bc2 = R(1) - std::pow(st.beta2, static_cast<R>(st.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<R>& p = *params[pi];
    const std::vector<R>& g = *grads[pi];
    if (g.size() != p.size() || st.first_moment[pi].size() != p.size())
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(pi));
    R* pv = p.ptr();
    std::vector<R>& m = st.first_moment[pi];
    std::vector<R>& v = st.second_moment[pi];
    for (size_t i = 0; i < p.size(); ++i) {
      pv[i] -= st.learning_rate * st.weight_decay * pv[i];
      m[i] = st.beta1 * m[i] + (R(1) - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (R(1) - st.beta2) * g[i] * g[i];
      const R mhat = m[i] / bc1;
      const R vhat = v[i] / bc2;
      pv[i] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.epsilon);
    }
  }
}

}  // namespace mart::diff
