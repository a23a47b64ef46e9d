#pragma once

#include <string>
#include <vector>

#include "mart/hac.hpp"
#include "mart/model.hpp"
#include "mart/ops.hpp"

namespace mart::loss {

using diff::Shape;
using diff::Tensor;

enum class AblationMode { full, no_hcl, no_pwt, neither };

inline AblationMode parse_ablation(const std::string& s) {
  if (s == "full") return AblationMode::full;
  if (s == "no_hcl") return AblationMode::no_hcl;
  if (s == "no_pwt") return AblationMode::no_pwt;
  if (s == "neither") return AblationMode::neither;
  throw ConfigError("ablation must be one of full|no_hcl|no_pwt|neither, got '" + s + "'");
}

inline bool uses_part_whole_terms(AblationMode m) {
  return m == AblationMode::full || m == AblationMode::no_pwt;
}

inline bool uses_pwt_stack(AblationMode m) {
  return m == AblationMode::full || m == AblationMode::no_hcl;
}

// Contrastive vectors of one instance: head-projected post-interaction
// vectors for every tree node, the head-projected encoder output of the
// second view's root (the pre-interaction positive), and the clip tree that
// supplies the length-ratio weights.
template <class R>
struct InstanceVectors {
  std::vector<Tensor<R>> hat_levels;  // per level n: [M^n x C]
  Tensor<R> root_tilde;               // [C]
  const hac::ClipTree* tree = nullptr;

  Tensor<R> root_hat() const { return diff::row(hat_levels[0], 0); }
};

template <class R>
struct ContrastiveBatch {
  std::vector<InstanceVectors<R>> instances;

  size_t size() const { return instances.size(); }
};

struct LossReport {
  std::vector<double> lpw;                         // per instance
  std::vector<double> lneg;                        // per instance
  std::vector<double> lhc;                         // per instance
  std::vector<std::vector<double>> pair_partials;  // [instance][level pair]
  std::vector<double> pair_partials_mean;          // per level pair
  double mean_lhc = 0.0;
  double mean_lpw = 0.0;
};

// Alignment term of one instance: for every whole node at level i, sum
// exp(sim/tau) over exactly its own M children, each term weighted by the
// child/whole duration ratio; summed over all level pairs. Returns an empty
// tensor when the tree has no pairs. pair_terms_out, when given, receives
// the per-level-pair partial sums.
template <class R>
Tensor<R> part_whole_term(const InstanceVectors<R>& inst, R tau,
                          std::vector<double>* pair_terms_out = nullptr) {
  if (inst.tree == nullptr) throw ConfigError("part_whole_term: instance has no clip tree");
  if (tau <= R(0)) throw ConfigError("part_whole_term: tau must be positive");
  const hac::ClipTree& tree = *inst.tree;
  if (inst.hat_levels.size() != tree.depth)
    throw ConfigError("part_whole_term: vector levels do not match the tree depth");
  const R inv_tau = R(1) / tau;

  Tensor<R> total;
  if (pair_terms_out) pair_terms_out->assign(tree.depth > 0 ? tree.depth - 1 : 0, 0.0);
  for (size_t lv = 0; lv + 1 < tree.depth; ++lv) {
    Tensor<R> level_sum;
    for (size_t m = 0; m < tree.levels[lv].size(); ++m) {
      Tensor<R> whole_vec = diff::row(inst.hat_levels[lv], m);
      const hac::ClipNode& whole_node = tree.node(static_cast<int>(lv), m);
      auto children = tree.children_of(static_cast<int>(lv), m);
      for (size_t c = 0; c < children.size(); ++c) {
        Tensor<R> child_vec = diff::row(inst.hat_levels[lv + 1], m * tree.branching + c);
        const double ratio = hac::clip_len_ratio(children[c], whole_node, tree.branching);
        Tensor<R> sim = cosine_sim(whole_vec, child_vec);
        Tensor<R> term =
            diff::scale(diff::exp(diff::scale(sim, inv_tau)), static_cast<R>(ratio));
        level_sum = level_sum.data ? diff::add(level_sum, term) : term;
      }
    }
    if (pair_terms_out) (*pair_terms_out)[lv] = static_cast<double>(level_sum[0]);
    total = total.data ? diff::add(total, level_sum) : level_sum;
  }
  return total;  // empty tensor when the tree has a single level
}

// Eq-6-style negative mass for instance b: the first sum runs over every
// instance including b itself (the positive lives in the denominator), the
// second skips u == b.
template <class R>
Tensor<R> negative_term(const ContrastiveBatch<R>& batch, size_t b, R tau) {
  if (batch.size() == 0) throw ConfigError("negative_term: empty batch");
  if (b >= batch.size()) throw ConfigError("negative_term: instance index out of range");
  const R inv_tau = R(1) / tau;
  Tensor<R> hat_b = batch.instances[b].root_hat();
  Tensor<R> total;
  for (size_t u = 0; u < batch.size(); ++u) {
    Tensor<R> sim = cosine_sim(hat_b, batch.instances[u].root_tilde);
    Tensor<R> term = diff::exp(diff::scale(sim, inv_tau));
    total = total.data ? diff::add(total, term) : term;
  }
  for (size_t u = 0; u < batch.size(); ++u) {
    if (u == b) continue;
    Tensor<R> sim = cosine_sim(hat_b, batch.instances[u].root_hat());
    Tensor<R> term = diff::exp(diff::scale(sim, inv_tau));
    total = diff::add(total, term);
  }
  return total;
}

// Per-instance loss
//   L_b = -log[(Lpw_b + exp(sim(hat_b, tilde_b)/tau)) / (Lpw_b + Lneg_b)]
// with the alignment term appearing in both numerator and denominator;
// include_pw = false drops it (plain InfoNCE over root vectors), which also
// happens naturally when the tree has no level pairs. The batch loss is the
// arithmetic mean.
template <class R>
std::pair<Tensor<R>, LossReport> hierarchical_loss(const ContrastiveBatch<R>& batch, R tau,
                                                   bool include_pw = true) {
  if (batch.size() == 0) throw ConfigError("hierarchical_loss: empty batch");
  const R inv_tau = R(1) / tau;
  LossReport report;
  std::vector<Tensor<R>> per_instance;
  per_instance.reserve(batch.size());

  for (size_t b = 0; b < batch.size(); ++b) {
    const InstanceVectors<R>& inst = batch.instances[b];
    std::vector<double> partials;
    Tensor<R> lpw;
    if (include_pw) lpw = part_whole_term(inst, tau, &partials);

    Tensor<R> pos = diff::exp(
        diff::scale(cosine_sim(inst.root_hat(), inst.root_tilde), inv_tau));
    Tensor<R> lneg = negative_term(batch, b, tau);

    Tensor<R> numerator = lpw.data ? diff::add(lpw, pos) : pos;
    Tensor<R> denominator = lpw.data ? diff::add(lpw, lneg) : lneg;
    Tensor<R> lhc = diff::sub(diff::log(denominator), diff::log(numerator));

    if (!std::isfinite(static_cast<double>(lhc[0])))
      throw NumericError("hierarchical_loss: non-finite loss for instance " +
                         std::to_string(b));

    report.lpw.push_back(lpw.data ? static_cast<double>(lpw[0]) : 0.0);
    report.lneg.push_back(static_cast<double>(lneg[0]));
    report.lhc.push_back(static_cast<double>(lhc[0]));
    report.pair_partials.push_back(std::move(partials));
    per_instance.push_back(std::move(lhc));
  }

  Tensor<R> stacked = diff::concat_rows(per_instance);
  Tensor<R> batch_loss = diff::mean(stacked);

  const size_t n_pairs = report.pair_partials.empty() ? 0 : report.pair_partials[0].size();
  report.pair_partials_mean.assign(n_pairs, 0.0);
  for (const auto& p : report.pair_partials)
    for (size_t i = 0; i < p.size(); ++i) report.pair_partials_mean[i] += p[i];
  for (double& v : report.pair_partials_mean) v /= static_cast<double>(batch.size());
  for (double v : report.lhc) report.mean_lhc += v;
  report.mean_lhc /= static_cast<double>(batch.size());
  for (double v : report.lpw) report.mean_lpw += v;
  report.mean_lpw /= static_cast<double>(batch.size());
  return {batch_loss, report};
}

}  // namespace mart::loss
