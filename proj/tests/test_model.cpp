#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mart/gradcheck.hpp"
#include "mart/model.hpp"

using namespace mart;
using namespace mart::diff;
using namespace mart::model;

namespace {

using T64 = Tensor<double>;

T64 rand_mat(size_t r, size_t c, Rng& rng, double s = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.uniform(-s, s);
  return T64::matrix(r, c, std::move(v));
}

dsp::LogMelSpec rand_spec(size_t frames, Rng& rng) {
  dsp::LogMelSpec s;
  s.mel_bands = dsp::kMelBands;
  s.frames = frames;
  s.values.resize(s.mel_bands * frames);
  for (auto& v : s.values) v = static_cast<float>(rng.uniform(-3.0, 3.0));
  return s;
}

// Direct per-element multi-head attention, no tensor machinery.
std::vector<double> attention_oracle(const T64& q, const T64& k, const T64& v, size_t heads) {
  const size_t nq = q.rows(), nk = k.rows(), dt = q.cols(), dh = dt / heads;
  std::vector<double> out(nq * dt, 0.0);
  for (size_t h = 0; h < heads; ++h) {
    for (size_t i = 0; i < nq; ++i) {
      std::vector<double> scores(nk);
      double mx = -1e300;
      for (size_t j = 0; j < nk; ++j) {
        double dot = 0;
        for (size_t d = 0; d < dh; ++d) dot += q.at(i, h * dh + d) * k.at(j, h * dh + d);
        scores[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, scores[j]);
      }
      double tot = 0;
      for (size_t j = 0; j < nk; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        tot += scores[j];
      }
      for (size_t j = 0; j < nk; ++j) scores[j] /= tot;
      for (size_t d = 0; d < dh; ++d) {
        double acc = 0;
        for (size_t j = 0; j < nk; ++j) acc += scores[j] * v.at(j, h * dh + d);
        out[i * dt + h * dh + d] = acc;
      }
    }
  }
  return out;
}

HierState<double> rand_state(size_t branching, size_t depth, size_t d_e, Rng& rng) {
  HierState<double> st;
  size_t rows = 1;
  for (size_t n = 0; n < depth; ++n) {
    st.levels.push_back(rand_mat(rows, d_e, rng));
    rows *= branching;
  }
  return st;
}

}  // namespace

TEST_CASE("encode contract: output dimension and eval determinism") {
  Rng rng(3);
  auto plan = encoder_channel_plan(8);
  REQUIRE(plan.size() == 7);
  CHECK(plan.back() == 8);
  auto full = encoder_channel_plan(512);
  CHECK(full == std::vector<size_t>({16, 32, 64, 128, 128, 256, 512}));

  auto enc = EncoderParams<double>::init(plan, rng);
  dsp::LogMelSpec spec = rand_spec(16, rng);
  T64 v1 = encode(spec, enc, false);
  REQUIRE(v1.shape == Shape{8});
  T64 v2 = encode(spec, enc, false);
  for (size_t i = 0; i < v1.size(); ++i) CHECK(v1[i] == v2[i]);  // bitwise in eval mode

  dsp::LogMelSpec bad = spec;
  bad.mel_bands = 64;
  bad.values.resize(64 * bad.frames);
  CHECK_THROWS_AS(encode(bad, enc, false), DimensionError);
}

TEST_CASE("encoder gradient passes the finite-difference check") {
  Rng rng(5);
  auto enc = EncoderParams<double>::init(encoder_channel_plan(8), rng);
  dsp::LogMelSpec spec = rand_spec(16, rng);

  ParamRegistry<double> reg;
  enc.register_params(reg, "enc");
  auto f = [&](Tape<double>* t) {
    if (t) reg.watch_all(*t);
    T64 v = encode(spec, enc, true);
    return mean(mul(v, v));
  };
  auto rep = grad_check<double>(reg.trainable, f);
  INFO("worst ", rep.worst_param, "[", rep.worst_index, "] analytic ", rep.worst_analytic,
       " numeric ", rep.worst_numeric);
  CHECK(rep.max_rel_error < 1e-4);
  reg.detach_all();
}

TEST_CASE("cross_attend degenerate and symmetric cases") {
  Rng rng(7);
  // single key: softmax over one key is 1, output equals the value row
  T64 q = rand_mat(3, 6, rng);
  T64 k1 = rand_mat(1, 6, rng);
  T64 v1 = rand_mat(1, 6, rng);
  T64 out = cross_attend(q, k1, v1, 3);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 6; ++j) CHECK(out.at(i, j) == doctest::Approx(v1.at(0, j)));

  // identical keys: uniform attention, output = mean of value rows
  std::vector<double> same;
  T64 krow = rand_mat(1, 6, rng);
  for (int i = 0; i < 4; ++i) same.insert(same.end(), krow.ptr(), krow.ptr() + 6);
  T64 k4 = T64::matrix(4, 6, same);
  T64 v4 = rand_mat(4, 6, rng);
  T64 out4 = cross_attend(q, k4, v4, 3);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 6; ++j) {
      double m = 0;
      for (size_t r = 0; r < 4; ++r) m += v4.at(r, j);
      m /= 4;
      CHECK(out4.at(i, j) == doctest::Approx(m).epsilon(1e-9));
    }

  CHECK_THROWS_AS(cross_attend(rand_mat(2, 5, rng), rand_mat(2, 5, rng), rand_mat(2, 5, rng), 3),
                  DimensionError);
}

TEST_CASE("cross_attend matches a direct per-element oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    T64 q = rand_mat(2, 6, rng);
    T64 k = rand_mat(3, 6, rng);
    T64 v = rand_mat(3, 6, rng);
    AttnCounter counter;
    T64 got = cross_attend(q, k, v, 3, &counter);
    CHECK(counter.calls == 1);
    auto want = attention_oracle(q, k, v, 3);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
  }
}

TEST_CASE("interact: residual identity at lambda zero, symmetry, oracle") {
  Rng rng(13);
  const size_t d_e = 8, d_t = 6, m = 2;
  auto unit = InteractionUnitParams<double>::init(d_e, d_t, 3, 0.0, 0.0, rng);
  T64 whole = rand_mat(1, d_e, rng);
  T64 parts = rand_mat(m, d_e, rng);
  AttnCounter counter;
  auto [w_out, p_out] = interact(whole, parts, unit, &counter);
  CHECK(counter.calls == 0);  // zero lambda never invokes attention
  for (size_t i = 0; i < w_out.size(); ++i) CHECK(w_out[i] == whole[i]);
  for (size_t i = 0; i < p_out.size(); ++i) CHECK(p_out[i] == parts[i]);

  // identical part vectors: uniform attention collapses, whole update equals
  // the single-part update
  auto unit2 = InteractionUnitParams<double>::init(d_e, d_t, 3, 0.7, 0.3, rng);
  T64 prow = rand_mat(1, d_e, rng);
  std::vector<double> dup(prow.ptr(), prow.ptr() + d_e);
  dup.insert(dup.end(), prow.ptr(), prow.ptr() + d_e);
  T64 parts_same = T64::matrix(2, d_e, dup);
  auto [w_multi, p_multi] = interact(whole, parts_same, unit2);
  auto [w_single, p_single] = interact(whole, prow, unit2);
  for (size_t i = 0; i < w_multi.size(); ++i)
    CHECK(w_multi[i] == doctest::Approx(w_single[i]).epsilon(1e-9));

  // composition oracle: attention + output map + scaled residual by hand
  auto unit3 = InteractionUnitParams<double>::init(d_e, d_t, 3, 0.9, 0.4, rng);
  auto affine_oracle = [](const T64& x, const T64& w, const T64& b) {
    T64 y = T64::zeros({x.rows(), w.cols()});
    for (size_t i = 0; i < x.rows(); ++i)
      for (size_t j = 0; j < w.cols(); ++j) {
        double acc = b[j];
        for (size_t kk = 0; kk < x.cols(); ++kk) acc += x.at(i, kk) * w.at(kk, j);
        y.at(i, j) = acc;
      }
    return y;
  };
  auto [wi, pi] = interact(whole, parts, unit3);
  {
    T64 qw = affine_oracle(whole, unit3.wq_whole, unit3.bq_whole);
    T64 kp = affine_oracle(parts, unit3.wk_part, unit3.bk_part);
    T64 vp = affine_oracle(parts, unit3.wv_part, unit3.bv_part);
    auto ctx = attention_oracle(qw, kp, vp, 3);
    T64 ctx_t = T64::matrix(1, d_t, ctx);
    T64 delta = affine_oracle(ctx_t, unit3.w_out, unit3.b_out);
    for (size_t j = 0; j < d_e; ++j)
      CHECK(wi.at(0, j) == doctest::Approx(whole.at(0, j) + 0.9 * delta.at(0, j)).epsilon(1e-6));

    T64 qp = affine_oracle(parts, unit3.wq_part, unit3.bq_part);
    T64 kw = affine_oracle(whole, unit3.wk_whole, unit3.bk_whole);
    T64 vw = affine_oracle(whole, unit3.wv_whole, unit3.bv_whole);
    auto ctx_up = attention_oracle(qp, kw, vw, 3);
    T64 ctx_up_t = T64::matrix(m, d_t, ctx_up);
    T64 delta_up = affine_oracle(ctx_up_t, unit3.w_out, unit3.b_out);
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < d_e; ++j)
        CHECK(pi.at(i, j) ==
              doctest::Approx(parts.at(i, j) + 0.4 * delta_up.at(i, j)).epsilon(1e-6));
  }
}

TEST_CASE("interact: permutation equivariance within a sibling group") {
  Rng rng(17);
  const size_t d_e = 8;
  auto unit = InteractionUnitParams<double>::init(d_e, 6, 3, 1.0, 1.0, rng);
  T64 whole = rand_mat(1, d_e, rng);
  T64 parts = rand_mat(3, d_e, rng);
  auto [w1, p1] = interact(whole, parts, unit);

  // swap part rows 0 and 2
  std::vector<double> perm(parts.size());
  const size_t order[3] = {2, 1, 0};
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < d_e; ++j) perm[i * d_e + j] = parts.at(order[i], j);
  T64 parts_perm = T64::matrix(3, d_e, perm);
  auto [w2, p2] = interact(whole, parts_perm, unit);

  for (size_t j = 0; j < d_e; ++j)
    CHECK(w1.at(0, j) == doctest::Approx(w2.at(0, j)).epsilon(1e-9));  // whole unchanged
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < d_e; ++j)
      CHECK(p2.at(i, j) == doctest::Approx(p1.at(order[i], j)).epsilon(1e-9));
}

TEST_CASE("pwt_block: identity at zero lambda, N=2 degeneracy, batched equals sequential") {
  Rng rng(19);
  const size_t d_e = 8, d_t = 6, m = 2;

  // all lambda zero leaves the state untouched (same buffers)
  {
    PwtBlockParams<double> blk;
    for (int i = 0; i < 2; ++i)
      blk.units.push_back(InteractionUnitParams<double>::init(d_e, d_t, 3, 0.0, 0.0, rng));
    HierState<double> st = rand_state(m, 3, d_e, rng);
    AttnCounter counter;
    HierState<double> out = pwt_block(st, blk, m, &counter);
    CHECK(counter.calls == 0);
    for (size_t n = 0; n < 3; ++n)
      for (size_t i = 0; i < st.levels[n].size(); ++i)
        CHECK(out.levels[n][i] == st.levels[n][i]);  // bitwise
  }

  // N=2 reduces exactly to one interact call
  {
    PwtBlockParams<double> blk;
    blk.units.push_back(InteractionUnitParams<double>::init(d_e, d_t, 3, 0.8, 0.5, rng));
    HierState<double> st = rand_state(m, 2, d_e, rng);
    HierState<double> out = pwt_block(st, blk, m);
    auto [w_ref, p_ref] = interact(st.levels[0], st.levels[1], blk.units[0]);
    for (size_t i = 0; i < w_ref.size(); ++i)
      CHECK(out.levels[0][i] == doctest::Approx(w_ref[i]).epsilon(1e-9));
    for (size_t i = 0; i < p_ref.size(); ++i)
      CHECK(out.levels[1][i] == doctest::Approx(p_ref[i]).epsilon(1e-9));
  }

  // batched evaluation equals the sequential per-group oracle
  {
    PwtBlockParams<double> blk;
    for (int i = 0; i < 3; ++i)
      blk.units.push_back(InteractionUnitParams<double>::init(d_e, d_t, 3, 0.6, 0.9, rng));
    HierState<double> st = rand_state(m, 4, d_e, rng);
    HierState<double> got = pwt_block(st, blk, m);

    // oracle: per level-pair, per sibling group, separate interact calls on
    // the block input; deltas summed onto the input
    std::vector<T64> expect;
    for (size_t n = 0; n < 4; ++n) {
      T64 copy(st.levels[n].shape, std::vector<double>(*st.levels[n].data));
      expect.push_back(copy);
    }
    for (size_t n = 0; n + 1 < 4; ++n) {
      const size_t groups = st.levels[n].rows();
      for (size_t g = 0; g < groups; ++g) {
        T64 whole = slice_rows(st.levels[n], g, g + 1);
        T64 parts = slice_rows(st.levels[n + 1], g * m, (g + 1) * m);
        auto [w_o, p_o] = interact(whole, parts, blk.units[n]);
        for (size_t j = 0; j < d_e; ++j) expect[n].at(g, j) += w_o.at(0, j) - whole.at(0, j);
        for (size_t r = 0; r < m; ++r)
          for (size_t j = 0; j < d_e; ++j)
            expect[n + 1].at(g * m + r, j) += p_o.at(r, j) - parts.at(r, j);
      }
    }
    for (size_t n = 0; n < 4; ++n)
      for (size_t i = 0; i < expect[n].size(); ++i)
        CHECK(got.levels[n][i] == doctest::Approx(expect[n][i]).epsilon(1e-6));
  }
}

TEST_CASE("pwt_block: parameter sharing across sibling groups") {
  Rng rng(23);
  const size_t d_e = 8;
  PwtBlockParams<double> blk;
  blk.units.push_back(InteractionUnitParams<double>::init(d_e, 6, 3, 1.0, 1.0, rng));
  blk.units.push_back(InteractionUnitParams<double>::init(d_e, 6, 3, 1.0, 1.0, rng));

  HierState<double> st;
  T64 root = rand_mat(1, d_e, rng);
  T64 mid_row = rand_mat(1, d_e, rng);
  T64 leaf_pair = rand_mat(2, d_e, rng);
  // identical inputs for both sibling groups of the (1,2) pair
  std::vector<double> mid(mid_row.ptr(), mid_row.ptr() + d_e);
  mid.insert(mid.end(), mid_row.ptr(), mid_row.ptr() + d_e);
  std::vector<double> leaves(leaf_pair.ptr(), leaf_pair.ptr() + 2 * d_e);
  leaves.insert(leaves.end(), leaf_pair.ptr(), leaf_pair.ptr() + 2 * d_e);
  st.levels = {root, T64::matrix(2, d_e, mid), T64::matrix(4, d_e, leaves)};

  HierState<double> out = pwt_block(st, blk, 2);
  for (size_t j = 0; j < d_e; ++j)
    CHECK(out.levels[1].at(0, j) == doctest::Approx(out.levels[1].at(1, j)).epsilon(1e-12));
  for (size_t r = 0; r < 2; ++r)
    for (size_t j = 0; j < d_e; ++j)
      CHECK(out.levels[2].at(r, j) == doctest::Approx(out.levels[2].at(2 + r, j)).epsilon(1e-12));
}

TEST_CASE("pwt_stack: single block equality, zero-lambda identity, gradients") {
  Rng rng(29);
  const size_t d_e = 8, d_t = 6, m = 2, depth = 3;

  {
    Rng r1(31), r2(31);
    std::vector<PwtBlockParams<double>> one;
    PwtBlockParams<double> b1;
    for (size_t n = 0; n + 1 < depth; ++n)
      b1.units.push_back(InteractionUnitParams<double>::init(d_e, d_t, 3, 1.0, 1.0, r1));
    one.push_back(std::move(b1));
    PwtBlockParams<double> b2;
    for (size_t n = 0; n + 1 < depth; ++n)
      b2.units.push_back(InteractionUnitParams<double>::init(d_e, d_t, 3, 1.0, 1.0, r2));

    HierState<double> st = rand_state(m, depth, d_e, rng);
    HierState<double> via_stack = pwt_stack(st, one, m);
    HierState<double> via_block = pwt_block(st, b2, m);
    for (size_t n = 0; n < depth; ++n)
      for (size_t i = 0; i < via_stack.levels[n].size(); ++i)
        CHECK(via_stack.levels[n][i] == via_block.levels[n][i]);
  }

  {
    std::vector<PwtBlockParams<double>> blocks;
    for (int b = 0; b < 3; ++b) {
      PwtBlockParams<double> blk;
      for (size_t n = 0; n + 1 < depth; ++n)
        blk.units.push_back(InteractionUnitParams<double>::init(d_e, d_t, 3, 0.0, 0.0, rng));
      blocks.push_back(std::move(blk));
    }
    HierState<double> st = rand_state(m, depth, d_e, rng);
    HierState<double> out = pwt_stack(st, blocks, m);
    for (size_t n = 0; n < depth; ++n)
      for (size_t i = 0; i < st.levels[n].size(); ++i)
        CHECK(out.levels[n][i] == st.levels[n][i]);  // bitwise identity
  }

  // 3-block toy stack gradient
  {
    std::vector<PwtBlockParams<double>> blocks;
    Rng ri(37);
    for (int b = 0; b < 3; ++b) {
      PwtBlockParams<double> blk;
      for (size_t n = 0; n + 1 < depth; ++n)
        blk.units.push_back(InteractionUnitParams<double>::init(d_e, d_t, 3, 1.0, 1.0, ri));
      blocks.push_back(std::move(blk));
    }
    ParamRegistry<double> reg;
    for (size_t b = 0; b < blocks.size(); ++b)
      blocks[b].register_params(reg, "pwt/block" + std::to_string(b));
    HierState<double> st = rand_state(m, depth, d_e, rng);
    auto f = [&](Tape<double>* t) {
      if (t) reg.watch_all(*t);
      HierState<double> out = pwt_stack(st, blocks, m);
      Tensor<double> acc;
      for (auto& lv : out.levels) {
        Tensor<double> s = sum(mul(lv, lv));
        acc = acc.data ? add(acc, s) : s;
      }
      return acc;
    };
    auto rep = grad_check<double>(reg.trainable, f);
    INFO("worst ", rep.worst_param, " rel ", rep.max_rel_error);
    CHECK(rep.max_rel_error < 1e-4);
    reg.detach_all();
  }
}

TEST_CASE("projection head contract and gradient") {
  Rng rng(41);
  auto head = ProjectionHeadParams<double>::init(8, 16, rng);
  T64 x = rand_mat(1, 8, rng);
  T64 y = project_head(x, head);
  CHECK(y.shape == Shape({1, 16}));

  T64 xv = row(x, 0);
  T64 yv = project_head(xv, head);
  CHECK(yv.shape == Shape({16}));

  auto zero_head = ProjectionHeadParams<double>::init(8, 16, rng);
  for (auto* t : {&zero_head.w1, &zero_head.b1, &zero_head.w2, &zero_head.b2})
    std::fill(t->data->begin(), t->data->end(), 0.0);
  T64 z = project_head(x, zero_head);
  for (size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);

  CHECK_THROWS_AS(project_head(rand_mat(1, 5, rng), head), DimensionError);

  ParamRegistry<double> reg;
  head.register_params(reg, "head");
  auto f = [&](Tape<double>* t) {
    if (t) reg.watch_all(*t);
    T64 out = project_head(x, head);
    return mean(mul(out, out));
  };
  auto rep = grad_check<double>(reg.trainable, f);
  CHECK(rep.max_rel_error < 1e-4);
  reg.detach_all();
}
