#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mart/gradcheck.hpp"
#include "mart/loss.hpp"

using namespace mart;
using namespace mart::diff;
using namespace mart::loss;

namespace {

using T64 = Tensor<double>;

T64 rand_mat(size_t r, size_t c, Rng& rng) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return T64::matrix(r, c, std::move(v));
}

T64 rand_vec(size_t d, Rng& rng) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return T64::vector(std::move(v));
}

InstanceVectors<double> rand_instance(const hac::ClipTree& tree, size_t dim, Rng& rng) {
  InstanceVectors<double> inst;
  inst.tree = &tree;
  size_t rows = 1;
  for (size_t n = 0; n < tree.depth; ++n) {
    inst.hat_levels.push_back(rand_mat(rows, dim, rng));
    rows *= tree.branching;
  }
  inst.root_tilde = rand_vec(dim, rng);
  return inst;
}

double cos_oracle(const double* a, const double* b, size_t d) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < d; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Scalar formula-by-formula evaluation of the alignment, negative, and
// per-instance loss terms, without any batching machinery.
double lpw_oracle(const InstanceVectors<double>& inst, double tau) {
  const hac::ClipTree& tree = *inst.tree;
  const size_t dim = inst.root_tilde.size();
  double total = 0;
  for (size_t lv = 0; lv + 1 < tree.depth; ++lv)
    for (size_t m = 0; m < tree.levels[lv].size(); ++m) {
      const double* whole = inst.hat_levels[lv].ptr() + m * dim;
      for (size_t c = 0; c < tree.branching; ++c) {
        const size_t ci = m * tree.branching + c;
        const double* child = inst.hat_levels[lv + 1].ptr() + ci * dim;
        const double lambda = static_cast<double>(tree.node(lv + 1, ci).length()) /
                              static_cast<double>(tree.node(lv, m).length());
        total += lambda * std::exp(cos_oracle(whole, child, dim) / tau);
      }
    }
  return total;
}

double lneg_oracle(const ContrastiveBatch<double>& batch, size_t b, double tau) {
  const size_t dim = batch.instances[b].root_tilde.size();
  const double* hat_b = batch.instances[b].hat_levels[0].ptr();
  double total = 0;
  for (size_t u = 0; u < batch.size(); ++u)
    total += std::exp(cos_oracle(hat_b, batch.instances[u].root_tilde.ptr(), dim) / tau);
  for (size_t u = 0; u < batch.size(); ++u) {
    if (u == b) continue;
    total += std::exp(cos_oracle(hat_b, batch.instances[u].hat_levels[0].ptr(), dim) / tau);
  }
  return total;
}

double lhc_oracle(const ContrastiveBatch<double>& batch, size_t b, double tau,
                  bool include_pw) {
  const size_t dim = batch.instances[b].root_tilde.size();
  const double* hat_b = batch.instances[b].hat_levels[0].ptr();
  const double pos =
      std::exp(cos_oracle(hat_b, batch.instances[b].root_tilde.ptr(), dim) / tau);
  const bool has_pairs = batch.instances[b].tree->depth > 1;
  const double lpw = include_pw && has_pairs ? lpw_oracle(batch.instances[b], tau) : 0.0;
  const double lneg = lneg_oracle(batch, b, tau);
  if (include_pw && has_pairs) return -std::log((lpw + pos) / (lpw + lneg));
  return -std::log(pos / lneg);
}

// Textbook InfoNCE with the same negative set.
double infonce_oracle(const ContrastiveBatch<double>& batch, size_t b, double tau) {
  const size_t dim = batch.instances[b].root_tilde.size();
  const double* hat_b = batch.instances[b].hat_levels[0].ptr();
  const double pos =
      std::exp(cos_oracle(hat_b, batch.instances[b].root_tilde.ptr(), dim) / tau);
  return -std::log(pos / lneg_oracle(batch, b, tau));
}

}  // namespace

TEST_CASE("part-whole term hand cases") {
  // N=2, M=2, both children identical to the root vector, tau=1:
  // each child weighted 1/2, so total = 0.5*2*e = e
  hac::ClipTree tree = hac::build_tree(64, 2, 2);
  InstanceVectors<double> inst;
  inst.tree = &tree;
  std::vector<double> v = {0.3, -0.7, 0.2, 0.9};
  inst.hat_levels.push_back(T64::matrix(1, 4, v));
  std::vector<double> kids = v;
  kids.insert(kids.end(), v.begin(), v.end());
  inst.hat_levels.push_back(T64::matrix(2, 4, kids));
  inst.root_tilde = T64::vector(v);
  T64 lpw = part_whole_term(inst, 1.0);
  CHECK(lpw[0] == doctest::Approx(std::exp(1.0)).epsilon(1e-9));

  // orthogonal child vectors, tau=1: each exp term is e^0 = 1
  InstanceVectors<double> orth;
  orth.tree = &tree;
  orth.hat_levels.push_back(T64::matrix(1, 4, {1, 0, 0, 0}));
  orth.hat_levels.push_back(T64::matrix(2, 4, {0, 1, 0, 0, 0, 0, 1, 0}));
  orth.root_tilde = T64::vector({1, 0, 0, 0});
  T64 lpw_orth = part_whole_term(orth, 1.0);
  CHECK(lpw_orth[0] == doctest::Approx(1.0).epsilon(1e-12));  // 0.5 + 0.5

  // tau -> infinity drives every term to 1: total -> sum over pairs of
  // lambda * M per whole
  Rng rng(3);
  hac::ClipTree t3 = hac::build_tree(512, 2, 3);
  InstanceVectors<double> inst3 = rand_instance(t3, 6, rng);
  T64 lpw_inf = part_whole_term(inst3, 1e9);
  CHECK(lpw_inf[0] == doctest::Approx(3.0).epsilon(1e-6));  // levels 0,1: 1 + 2

  // zero-norm vector is rejected
  InstanceVectors<double> degen;
  degen.tree = &tree;
  degen.hat_levels.push_back(T64::matrix(1, 4, {0, 0, 0, 0}));
  degen.hat_levels.push_back(T64::matrix(2, 4, {0, 1, 0, 0, 0, 0, 1, 0}));
  degen.root_tilde = T64::vector({1, 0, 0, 0});
  CHECK_THROWS_AS(part_whole_term(degen, 1.0), DomainError);
}

TEST_CASE("lambda weighting: equal splits contribute exactly 1/M per child") {
  // all vectors identical: pair partial at level i = (1/M) * M^i * M * e^(1/tau)
  hac::ClipTree tree = hac::build_tree(1024, 2, 4);
  InstanceVectors<double> inst;
  inst.tree = &tree;
  std::vector<double> v = {0.5, 0.25, -0.4};
  size_t rows = 1;
  for (size_t n = 0; n < 4; ++n) {
    std::vector<double> data;
    for (size_t r = 0; r < rows; ++r) data.insert(data.end(), v.begin(), v.end());
    inst.hat_levels.push_back(T64::matrix(rows, 3, std::move(data)));
    rows *= 2;
  }
  inst.root_tilde = T64::vector(v);
  std::vector<double> partials;
  part_whole_term(inst, 0.5, &partials);
  REQUIRE(partials.size() == 3);
  const double e2 = std::exp(2.0);  // sim 1 / tau 0.5
  CHECK(partials[0] == doctest::Approx(1.0 * e2).epsilon(1e-6));
  CHECK(partials[1] == doctest::Approx(2.0 * e2).epsilon(1e-6));
  CHECK(partials[2] == doctest::Approx(4.0 * e2).epsilon(1e-6));
}

TEST_CASE("negative term hand cases") {
  Rng rng(5);
  hac::ClipTree tree = hac::build_tree(64, 2, 2);

  // B=1: only the positive term survives
  ContrastiveBatch<double> solo;
  solo.instances.push_back(rand_instance(tree, 8, rng));
  T64 lneg = negative_term(solo, 0, 0.5);
  const double pos = std::exp(cos_oracle(solo.instances[0].hat_levels[0].ptr(),
                                         solo.instances[0].root_tilde.ptr(), 8) /
                              0.5);
  CHECK(lneg[0] == doctest::Approx(pos).epsilon(1e-12));

  // all vectors orthogonal, tau=1, B=3 -> 3*e^0 + 2*e^0 = 5
  ContrastiveBatch<double> orth;
  for (size_t b = 0; b < 3; ++b) {
    InstanceVectors<double> inst;
    inst.tree = &tree;
    std::vector<double> hat(8, 0.0), tilde(8, 0.0);
    hat[b] = 1.0;
    tilde[b + 3] = 1.0;
    std::vector<double> kids(16, 0.0);
    kids[6] = 1.0;
    kids[8 + 7] = 1.0;
    inst.hat_levels.push_back(T64::matrix(1, 8, hat));
    inst.hat_levels.push_back(T64::matrix(2, 8, kids));
    inst.root_tilde = T64::vector(tilde);
    orth.instances.push_back(std::move(inst));
  }
  for (size_t b = 0; b < 3; ++b) CHECK(negative_term(orth, b, 1.0)[0] == doctest::Approx(5.0));

  // lneg >= exp(sim(hat_b, tilde_b)/tau) always
  for (int trial = 0; trial < 20; ++trial) {
    ContrastiveBatch<double> batch;
    for (int b = 0; b < 3; ++b) batch.instances.push_back(rand_instance(tree, 8, rng));
    for (size_t b = 0; b < 3; ++b) {
      const double p = std::exp(cos_oracle(batch.instances[b].hat_levels[0].ptr(),
                                           batch.instances[b].root_tilde.ptr(), 8) /
                                0.5);
      CHECK(negative_term(batch, b, 0.5)[0] >= p - 1e-12);
    }
  }
}

TEST_CASE("loss degeneracies: B=1 gives exactly zero") {
  Rng rng(7);
  hac::ClipTree tree = hac::build_tree(256, 2, 3);
  // double precision: exactly zero
  {
    ContrastiveBatch<double> batch;
    batch.instances.push_back(rand_instance(tree, 16, rng));
    auto [lossT, report] = hierarchical_loss(batch, 0.5);
    CHECK(lossT[0] == 0.0);
  }
  // single precision: within 1e-7
  {
    ContrastiveBatch<float> batch;
    InstanceVectors<float> inst;
    inst.tree = &tree;
    size_t rows = 1;
    for (size_t n = 0; n < 3; ++n) {
      std::vector<float> v(rows * 16);
      for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
      inst.hat_levels.push_back(Tensor<float>::matrix(rows, 16, std::move(v)));
      rows *= 2;
    }
    std::vector<float> tv(16);
    for (auto& x : tv) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    inst.root_tilde = Tensor<float>::vector(std::move(tv));
    batch.instances.push_back(std::move(inst));
    auto [lossT, report] = hierarchical_loss(batch, 0.5f);
    CHECK(std::abs(lossT[0]) <= 1e-7f);
  }
}

TEST_CASE("loss is non-negative and numerator never exceeds denominator") {
  Rng rng(11);
  hac::ClipTree tree = hac::build_tree(300, 2, 3);
  for (int trial = 0; trial < 30; ++trial) {
    ContrastiveBatch<double> batch;
    const size_t B = 2 + rng.index(3);
    for (size_t b = 0; b < B; ++b) batch.instances.push_back(rand_instance(tree, 12, rng));
    auto [lossT, report] = hierarchical_loss(batch, 0.5);
    CHECK(lossT[0] >= 0.0);
    for (size_t b = 0; b < B; ++b) {
      CHECK(report.lhc[b] >= 0.0);
      CHECK(report.lpw[b] >= 0.0);
      CHECK(report.lneg[b] > 0.0);
    }
    // batch mean is the arithmetic mean of per-instance values
    double m = 0;
    for (double v : report.lhc) m += v;
    m /= B;
    CHECK(report.mean_lhc == doctest::Approx(m).epsilon(1e-12));
    CHECK(lossT[0] == doctest::Approx(m).epsilon(1e-9));
  }
}

TEST_CASE("batched loss matches the scalar oracle on random batches") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t m = 2 + rng.index(2);
    const size_t n = 1 + rng.index(3);
    long min_root = 1;
    for (size_t i = 0; i + 1 < n; ++i) min_root *= static_cast<long>(m);
    hac::ClipTree tree =
        hac::build_tree(min_root * 8 + static_cast<long>(rng.index(100)), m, n);
    ContrastiveBatch<double> batch;
    const size_t B = 1 + rng.index(4);
    for (size_t b = 0; b < B; ++b) batch.instances.push_back(rand_instance(tree, 256, rng));
    auto [lossT, report] = hierarchical_loss(batch, 0.5);
    double mean_ref = 0;
    for (size_t b = 0; b < B; ++b) {
      const double ref = lhc_oracle(batch, b, 0.5, true);
      CHECK(std::abs(report.lhc[b] - ref) < 1e-6);
      mean_ref += ref;
    }
    mean_ref /= B;
    CHECK(std::abs(lossT[0] - mean_ref) < 1e-6);
  }
}

TEST_CASE("ablations: no_hcl equals textbook InfoNCE; N=1 collapses full to no_hcl") {
  Rng rng(17);
  hac::ClipTree tree = hac::build_tree(400, 2, 3);

  // no_hcl with B=1 -> 0
  {
    ContrastiveBatch<double> solo;
    solo.instances.push_back(rand_instance(tree, 8, rng));
    auto [lossT, report] = hierarchical_loss(solo, 0.5, false);
    CHECK(lossT[0] == 0.0);
  }

  // no_hcl equals the standalone InfoNCE oracle
  for (int trial = 0; trial < 20; ++trial) {
    ContrastiveBatch<double> batch;
    const size_t B = 2 + rng.index(3);
    for (size_t b = 0; b < B; ++b) batch.instances.push_back(rand_instance(tree, 10, rng));
    auto [lossT, report] = hierarchical_loss(batch, 0.5, false);
    for (size_t b = 0; b < B; ++b)
      CHECK(std::abs(report.lhc[b] - infonce_oracle(batch, b, 0.5)) < 1e-6);
  }

  // a single-level tree leaves no pairs: full == no_hcl exactly
  hac::ClipTree flat = hac::build_tree(100, 2, 1);
  ContrastiveBatch<double> batch;
  for (int b = 0; b < 3; ++b) batch.instances.push_back(rand_instance(flat, 8, rng));
  auto [full_loss, full_rep] = hierarchical_loss(batch, 0.5, true);
  auto [nohcl_loss, nohcl_rep] = hierarchical_loss(batch, 0.5, false);
  CHECK(full_loss[0] == nohcl_loss[0]);  // bitwise
  for (size_t b = 0; b < 3; ++b) CHECK(full_rep.lhc[b] == nohcl_rep.lhc[b]);

  // mode helpers
  CHECK(uses_part_whole_terms(AblationMode::full));
  CHECK(!uses_part_whole_terms(AblationMode::no_hcl));
  CHECK(uses_pwt_stack(AblationMode::no_hcl));
  CHECK(!uses_pwt_stack(AblationMode::no_pwt));
  CHECK(!uses_pwt_stack(AblationMode::neither));
  CHECK_THROWS_AS(parse_ablation("bogus"), ConfigError);
}

TEST_CASE("monotonicity: raising the positive similarity never raises the loss") {
  Rng rng(19);
  hac::ClipTree tree = hac::build_tree(256, 2, 3);
  ContrastiveBatch<double> batch;
  for (int b = 0; b < 3; ++b) batch.instances.push_back(rand_instance(tree, 8, rng));

  // root_tilde of instance 1 sweeps from orthogonal to parallel with hat
  std::vector<double> hat(batch.instances[1].hat_levels[0].ptr(),
                          batch.instances[1].hat_levels[0].ptr() + 8);
  double norm = 0;
  for (double v : hat) norm += v * v;
  norm = std::sqrt(norm);
  std::vector<double> e1(8), e2(8, 0.0);
  for (size_t i = 0; i < 8; ++i) e1[i] = hat[i] / norm;
  e2[0] = 1.0;  // Gram-Schmidt against e1
  double d = 0;
  for (size_t i = 0; i < 8; ++i) d += e2[i] * e1[i];
  for (size_t i = 0; i < 8; ++i) e2[i] -= d * e1[i];
  double n2 = 0;
  for (double v : e2) n2 += v * v;
  n2 = std::sqrt(n2);
  for (double& v : e2) v /= n2;

  double prev = 1e300;
  for (int k = 0; k <= 10; ++k) {
    const double theta = (1.0 - k / 10.0) * M_PI / 2.0;  // sim = cos(theta) rises 0 -> 1
    std::vector<double> tilde(8);
    for (size_t i = 0; i < 8; ++i) tilde[i] = std::cos(theta) * e1[i] + std::sin(theta) * e2[i];
    batch.instances[1].root_tilde = T64::vector(tilde);
    auto [lossT, report] = hierarchical_loss(batch, 0.5);
    CHECK(report.lhc[1] <= prev + 1e-12);
    prev = report.lhc[1];
  }
}

TEST_CASE("gradient of the mean loss w.r.t. every contrastive vector") {
  Rng rng(23);
  hac::ClipTree tree = hac::build_tree(128, 2, 2);  // 2-level, M=2 toy model
  ContrastiveBatch<double> batch;
  for (int b = 0; b < 2; ++b) batch.instances.push_back(rand_instance(tree, 6, rng));

  std::vector<std::pair<std::string, T64*>> params;
  for (size_t b = 0; b < batch.size(); ++b) {
    for (size_t n = 0; n < batch.instances[b].hat_levels.size(); ++n)
      params.push_back({"b" + std::to_string(b) + "/hat" + std::to_string(n),
                        &batch.instances[b].hat_levels[n]});
    params.push_back({"b" + std::to_string(b) + "/tilde", &batch.instances[b].root_tilde});
  }
  auto f = [&](Tape<double>* t) {
    if (t)
      for (auto& [name, p] : params) t->watch(*p);
    auto [lossT, report] = hierarchical_loss(batch, 0.5);
    return lossT;
  };
  auto rep = grad_check<double>(params, f);
  INFO("worst ", rep.worst_param, " rel ", rep.max_rel_error);
  CHECK(rep.max_rel_error < 1e-4);
  for (auto& [name, p] : params) p->detach();
}
