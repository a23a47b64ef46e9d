#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mart/tensor.hpp"

namespace mart::diff {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  size_t checked = 0;
  double tolerance = 1e-4;
  bool passed = false;
};

// Compares reverse-mode gradients against central finite differences for a
// scalar function of the given parameters. `f` must rebuild the computation
// each call; it records on the tape when one is supplied and runs a pure
// forward pass otherwise. Meant to run in 64-bit mode; 32-bit differences
// are too noisy to be conclusive.
//
// Gradients whose analytic and numeric values both fall below denom_floor
// are counted as agreeing: central differences cannot resolve anything
// there (the quotient noise is eps*|f|/2h), and parameters with an exactly
// zero gradient, like key-projection biases behind a softmax, would
// otherwise fail on pure round-off.
template <class R = double>
GradCheckReport grad_check(const std::vector<std::pair<std::string, Tensor<R>*>>& params,
                           const std::function<Tensor<R>(Tape<R>*)>& f, double h = 1e-5,
                           double tolerance = 1e-4, double denom_floor = 1e-6) {
  GradCheckReport rep;
  rep.tolerance = tolerance;

  std::vector<std::vector<R>> analytic;
  {
    Tape<R> tape;
    for (auto& [name, p] : params) tape.watch(*p);
    Tensor<R> loss = f(&tape);
    if (loss.size() != 1) throw DimensionError("grad_check: f must return a scalar");
    if (!std::isfinite(static_cast<double>(loss[0])))
      throw NumericError("grad_check: non-finite loss in analytic pass");
    tape.backward(loss);
    for (auto& [name, p] : params) analytic.push_back(tape.grad(*p));
    for (auto& [name, p] : params) p->detach();
  }

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<R>& p = *params[pi].second;
    for (size_t i = 0; i < p.size(); ++i) {
      const R orig = p[i];
      p[i] = orig + static_cast<R>(h);
      Tensor<R> lp = f(nullptr);
      p[i] = orig - static_cast<R>(h);
      Tensor<R> lm = f(nullptr);
      p[i] = orig;
      const double fp = static_cast<double>(lp[0]);
      const double fm = static_cast<double>(lm[0]);
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("grad_check: non-finite loss while perturbing " + params[pi].first);
      const double numeric = (fp - fm) / (2.0 * h);
      const double an = static_cast<double>(analytic[pi][i]);
      const bool both_vanish = std::abs(an) < denom_floor && std::abs(numeric) < denom_floor;
      const double rel =
          both_vanish ? 0.0 : std::abs(an - numeric) / std::max(std::abs(an), std::abs(numeric));
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = params[pi].first;
        rep.worst_index = i;
        rep.worst_analytic = an;
        rep.worst_numeric = numeric;
      }
      ++rep.checked;
    }
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace mart::diff
