#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mart/hac.hpp"
#include "mart/ops.hpp"
#include "mart/registry.hpp"
#include "mart/spectrogram.hpp"

namespace mart::model {

using diff::Shape;
using diff::Tensor;

// Counts scaled dot-product attention invocations; lets ablation runs prove
// that the part-whole transformer really was bypassed.
struct AttnCounter {
  uint64_t calls = 0;
};

namespace init {

template <class R>
Tensor<R> he_normal(Shape s, size_t fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<R> v(diff::numel(s));
  for (auto& x : v) x = static_cast<R>(rng.normal() * std);
  return Tensor<R>(std::move(s), std::move(v));
}

template <class R>
Tensor<R> xavier_uniform(size_t in, size_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<R> v(in * out);
  for (auto& x : v) x = static_cast<R>(rng.uniform(-limit, limit));
  return Tensor<R>(Shape{in, out}, std::move(v));
}

// Nonzero bias init keeps head outputs away from the exact zero vector
// even when a narrow ReLU layer goes dead; cosine similarity rejects
// zero-norm inputs by contract.
template <class R>
Tensor<R> bias_uniform(size_t fan_in, size_t out, Rng& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<R> v(out);
  for (auto& x : v) x = static_cast<R>(rng.uniform(-limit, limit));
  return Tensor<R>(Shape{out}, std::move(v));
}

}  // namespace init

// ---------------------------------------------------------------------------
// projection encoder: 7 blocks of (3x3 conv, batchnorm, rectifier, 2x2 pool)
// over a 128 x frames log-mel image, then global average pooling.
// ---------------------------------------------------------------------------

template <class R>
struct ConvBlockParams {
  Tensor<R> kernels;  // [Cout x Cin x 3 x 3]
  Tensor<R> gamma, beta;
  Tensor<R> run_mean, run_var;  // state, not optimized
};

template <class R>
struct EncoderParams {
  std::vector<ConvBlockParams<R>> blocks;

  size_t out_dim() const { return blocks.back().kernels.shape[0]; }

  static EncoderParams init(std::span<const size_t> channels, Rng& rng) {
    EncoderParams enc;
    size_t cin = 1;
    for (size_t cout : channels) {
      ConvBlockParams<R> blk;
      blk.kernels = init::he_normal<R>(Shape{cout, cin, 3, 3}, cin * 9, rng);
      blk.gamma = Tensor<R>::full({cout}, R(1));
      blk.beta = Tensor<R>::zeros({cout});
      blk.run_mean = Tensor<R>::zeros({cout});
      blk.run_var = Tensor<R>::full({cout}, R(1));
      enc.blocks.push_back(std::move(blk));
      cin = cout;
    }
    return enc;
  }

  void register_params(diff::ParamRegistry<R>& reg, const std::string& prefix) {
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = prefix + "/block" + std::to_string(i);
      reg.add(p + "/conv_w", &blocks[i].kernels);
      reg.add(p + "/bn_gamma", &blocks[i].gamma);
      reg.add(p + "/bn_beta", &blocks[i].beta);
      reg.add_state(p + "/bn_rmean", &blocks[i].run_mean);
      reg.add_state(p + "/bn_rvar", &blocks[i].run_var);
    }
  }
};

// Channel plan scaled from the full-width 16,32,64,128,128,256,512 profile
// so that the last stage equals the requested output dimension.
inline std::vector<size_t> encoder_channel_plan(size_t d_e) {
  static const size_t full[7] = {16, 32, 64, 128, 128, 256, 512};
  std::vector<size_t> plan(7);
  for (size_t i = 0; i < 7; ++i) {
    const size_t scaled = (full[i] * d_e) / 512;
    plan[i] = std::max<size_t>(4, scaled);
  }
  plan[6] = d_e;
  return plan;
}

// One shared parameter set encodes clips at every level; the equal-size
// spectrogram contract makes that well defined. Frames are repeat-edge
// padded to a multiple of 2^7 so the seven pool stages stay even.
template <class R>
Tensor<R> encode(const dsp::LogMelSpec& spec, EncoderParams<R>& enc, bool training) {
  if (spec.mel_bands != dsp::kMelBands)
    throw DimensionError("encode: expected " + std::to_string(dsp::kMelBands) +
                         " mel bands, got " + std::to_string(spec.mel_bands));
  if (spec.frames == 0) throw DimensionError("encode: empty spectrogram");
  const size_t stride = size_t(1) << enc.blocks.size();
  const size_t w = ((spec.frames + stride - 1) / stride) * stride;
  std::vector<R> input(spec.mel_bands * w);
  for (size_t m = 0; m < spec.mel_bands; ++m)
    for (size_t t = 0; t < w; ++t)
      input[m * w + t] =
          static_cast<R>(spec.values[m * spec.frames + std::min(t, spec.frames - 1)]);
  Tensor<R> x(Shape{1, spec.mel_bands, w}, std::move(input));
  for (auto& blk : enc.blocks) {
    x = conv2d(x, blk.kernels);
    x = batchnorm2d(x, blk.gamma, blk.beta, blk.run_mean, blk.run_var, training);
    x = relu(x);
    x = maxpool2d(x, 2);
  }
  return spatial_mean(x);
}

// ---------------------------------------------------------------------------
// part-whole interaction
// ---------------------------------------------------------------------------

// Scaled dot-product multi-head attention: per head h,
// softmax(Q_h K_h^T / sqrt(D_t/H)) V_h, heads concatenated. The unit's
// output map is applied by the caller.
template <class R>
Tensor<R> cross_attend(const Tensor<R>& queries, const Tensor<R>& keys,
                       const Tensor<R>& values, size_t heads, AttnCounter* counter = nullptr) {
  if (queries.rank() != 2 || keys.rank() != 2 || values.rank() != 2)
    throw DimensionError("cross_attend: expected 2-D tensors");
  const size_t dt = queries.cols();
  if (keys.cols() != dt || values.cols() != dt)
    throw DimensionError("cross_attend: feature dims disagree: " +
                         diff::shape_str(queries.shape) + ", " + diff::shape_str(keys.shape) +
                         ", " + diff::shape_str(values.shape));
  if (keys.rows() != values.rows())
    throw DimensionError("cross_attend: key/value row mismatch");
  if (heads == 0 || dt % heads != 0)
    throw DimensionError("cross_attend: dimension " + std::to_string(dt) +
                         " not divisible by " + std::to_string(heads) + " heads");
  if (counter) counter->calls += 1;
  const size_t dh = dt / heads;
  const R inv_sqrt = static_cast<R>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<R>> head_outputs;
  head_outputs.reserve(heads);
  for (size_t h = 0; h < heads; ++h) {
    Tensor<R> qh = diff::slice_cols(queries, h * dh, (h + 1) * dh);
    Tensor<R> kh = diff::slice_cols(keys, h * dh, (h + 1) * dh);
    Tensor<R> vh = diff::slice_cols(values, h * dh, (h + 1) * dh);
    Tensor<R> scores = diff::scale(diff::matmul(qh, diff::transpose(kh)), inv_sqrt);
    Tensor<R> weights = diff::softmax(scores);
    head_outputs.push_back(diff::matmul(weights, vh));
  }
  return diff::concat_cols(head_outputs);
}

// Per-level-pair parameters: query/key/value maps for the whole side and the
// part side, one output map shared by both directions, and the residual
// scales of Eq-style updates (down = whole update, up = part update). One
// unit is shared by all sibling groups at its level pair.
template <class R>
struct InteractionUnitParams {
  Tensor<R> wq_whole, bq_whole, wk_whole, bk_whole, wv_whole, bv_whole;
  Tensor<R> wq_part, bq_part, wk_part, bk_part, wv_part, bv_part;
  Tensor<R> w_out, b_out;
  size_t heads = 3;
  R lambda_down = R(1);
  R lambda_up = R(1);

  static InteractionUnitParams init(size_t d_e, size_t d_t, size_t heads, R lambda_down,
                                    R lambda_up, Rng& rng) {
    if (heads == 0 || d_t % heads != 0)
      throw ConfigError("interaction unit: D_t=" + std::to_string(d_t) +
                        " not divisible by heads=" + std::to_string(heads));
    InteractionUnitParams u;
    u.heads = heads;
    u.lambda_down = lambda_down;
    u.lambda_up = lambda_up;
    auto linear = [&](Tensor<R>& w, Tensor<R>& b, size_t in, size_t out) {
      w = init::xavier_uniform<R>(in, out, rng);
      b = init::bias_uniform<R>(in, out, rng);
    };
    linear(u.wq_whole, u.bq_whole, d_e, d_t);
    linear(u.wk_whole, u.bk_whole, d_e, d_t);
    linear(u.wv_whole, u.bv_whole, d_e, d_t);
    linear(u.wq_part, u.bq_part, d_e, d_t);
    linear(u.wk_part, u.bk_part, d_e, d_t);
    linear(u.wv_part, u.bv_part, d_e, d_t);
    linear(u.w_out, u.b_out, d_t, d_e);
    return u;
  }

  void register_params(diff::ParamRegistry<R>& reg, const std::string& prefix) {
    reg.add(prefix + "/wq_whole", &wq_whole);
    reg.add(prefix + "/bq_whole", &bq_whole);
    reg.add(prefix + "/wk_whole", &wk_whole);
    reg.add(prefix + "/bk_whole", &bk_whole);
    reg.add(prefix + "/wv_whole", &wv_whole);
    reg.add(prefix + "/bv_whole", &bv_whole);
    reg.add(prefix + "/wq_part", &wq_part);
    reg.add(prefix + "/bq_part", &bq_part);
    reg.add(prefix + "/wk_part", &wk_part);
    reg.add(prefix + "/bk_part", &bk_part);
    reg.add(prefix + "/wv_part", &wv_part);
    reg.add(prefix + "/bv_part", &bv_part);
    reg.add(prefix + "/w_out", &w_out);
    reg.add(prefix + "/b_out", &b_out);
  }
};

// Bidirectional exchange between one whole clip and its M parts. Both
// attention directions read the unit's input vectors; each residual is
// scaled by its own lambda. A zero lambda short-circuits that direction, so
// a fully zeroed unit is the exact identity and never invokes attention.
template <class R>
std::pair<Tensor<R>, Tensor<R>> interact(const Tensor<R>& whole, const Tensor<R>& parts,
                                         InteractionUnitParams<R>& unit,
                                         AttnCounter* counter = nullptr) {
  Tensor<R> w = whole.rank() == 1 ? diff::reshape(whole, Shape{1, whole.shape[0]}) : whole;
  if (w.rows() != 1) throw DimensionError("interact: whole must be a single row");
  if (parts.rank() != 2 || parts.cols() != w.cols())
    throw DimensionError("interact: parts shape " + diff::shape_str(parts.shape) +
                         " incompatible with whole " + diff::shape_str(w.shape));
  Tensor<R> whole_out = w;
  Tensor<R> parts_out = parts;
  if (unit.lambda_down != R(0)) {
    Tensor<R> qw = diff::affine(w, unit.wq_whole, unit.bq_whole);
    Tensor<R> kp = diff::affine(parts, unit.wk_part, unit.bk_part);
    Tensor<R> vp = diff::affine(parts, unit.wv_part, unit.bv_part);
    Tensor<R> ctx = cross_attend(qw, kp, vp, unit.heads, counter);
    Tensor<R> delta = diff::affine(ctx, unit.w_out, unit.b_out);
    whole_out = diff::add(w, diff::scale(delta, unit.lambda_down));
  }
  if (unit.lambda_up != R(0)) {
    Tensor<R> qp = diff::affine(parts, unit.wq_part, unit.bq_part);
    Tensor<R> kw = diff::affine(w, unit.wk_whole, unit.bk_whole);
    Tensor<R> vw = diff::affine(w, unit.wv_whole, unit.bv_whole);
    Tensor<R> ctx = cross_attend(qp, kw, vw, unit.heads, counter);
    Tensor<R> delta = diff::affine(ctx, unit.w_out, unit.b_out);
    parts_out = diff::add(parts, diff::scale(delta, unit.lambda_up));
  }
  if (whole.rank() == 1) whole_out = diff::reshape(whole_out, Shape{whole_out.cols()});
  return {whole_out, parts_out};
}

// Per-level representation matrices: levels[n] is M^n x D_e.
template <class R>
struct HierState {
  std::vector<Tensor<R>> levels;
  bool post_interaction = false;

  size_t depth() const { return levels.size(); }
};

template <class R>
struct PwtBlockParams {
  std::vector<InteractionUnitParams<R>> units;  // one per adjacent level pair

  void register_params(diff::ParamRegistry<R>& reg, const std::string& prefix) {
    for (size_t i = 0; i < units.size(); ++i)
      units[i].register_params(reg, prefix + "/pair" + std::to_string(i));
  }
};

namespace detail {

template <class R>
void check_state(const HierState<R>& state, size_t branching, size_t n_units) {
  if (state.depth() != n_units + 1)
    throw ConfigError("pwt_block: state has " + std::to_string(state.depth()) +
                      " levels but the block covers " + std::to_string(n_units) +
                      " level pairs");
  size_t expect = 1;
  for (size_t n = 0; n < state.depth(); ++n) {
    if (state.levels[n].rank() != 2 || state.levels[n].rows() != expect)
      throw ConfigError("pwt_block: level " + std::to_string(n) + " must have " +
                        std::to_string(expect) + " rows, got " +
                        diff::shape_str(state.levels[n].shape));
    expect *= branching;
  }
}

}  // namespace detail

// One part-whole transformer: every (whole, parts) pair exchanges
// information, all directions reading the block's input state. A node in an
// intermediate level accumulates both its child-side and its parent-side
// attention term on one residual:
//   out = in + lambda_down * A_child + lambda_up * A_parent
// The root gets only the child term, leaves only the parent term.
// Projections are computed level-wide (parameters are shared across sibling
// groups), attention runs per group.
template <class R>
HierState<R> pwt_block(const HierState<R>& state, PwtBlockParams<R>& block, size_t branching,
                       AttnCounter* counter = nullptr) {
  detail::check_state(state, branching, block.units.size());
  const size_t depth = state.depth();
  std::vector<Tensor<R>> delta_down(depth), delta_up(depth);  // empty = absent

  for (size_t n = 0; n + 1 < depth; ++n) {
    InteractionUnitParams<R>& unit = block.units[n];
    const Tensor<R>& wholes = state.levels[n];
    const Tensor<R>& parts = state.levels[n + 1];
    const size_t groups = wholes.rows();

    if (unit.lambda_down != R(0)) {
      Tensor<R> qw = diff::affine(wholes, unit.wq_whole, unit.bq_whole);
      Tensor<R> kp = diff::affine(parts, unit.wk_part, unit.bk_part);
      Tensor<R> vp = diff::affine(parts, unit.wv_part, unit.bv_part);
      std::vector<Tensor<R>> ctx_rows;
      ctx_rows.reserve(groups);
      for (size_t g = 0; g < groups; ++g) {
        Tensor<R> q = diff::slice_rows(qw, g, g + 1);
        Tensor<R> k = diff::slice_rows(kp, g * branching, (g + 1) * branching);
        Tensor<R> v = diff::slice_rows(vp, g * branching, (g + 1) * branching);
        ctx_rows.push_back(cross_attend(q, k, v, unit.heads, counter));
      }
      Tensor<R> ctx = diff::concat_rows(ctx_rows);
      delta_down[n] = diff::scale(diff::affine(ctx, unit.w_out, unit.b_out), unit.lambda_down);
    }
    if (unit.lambda_up != R(0)) {
      Tensor<R> qp = diff::affine(parts, unit.wq_part, unit.bq_part);
      Tensor<R> kw = diff::affine(wholes, unit.wk_whole, unit.bk_whole);
      Tensor<R> vw = diff::affine(wholes, unit.wv_whole, unit.bv_whole);
      std::vector<Tensor<R>> ctx_rows;
      ctx_rows.reserve(groups);
      for (size_t g = 0; g < groups; ++g) {
        Tensor<R> q = diff::slice_rows(qp, g * branching, (g + 1) * branching);
        Tensor<R> k = diff::slice_rows(kw, g, g + 1);
        Tensor<R> v = diff::slice_rows(vw, g, g + 1);
        ctx_rows.push_back(cross_attend(q, k, v, unit.heads, counter));
      }
      Tensor<R> ctx = diff::concat_rows(ctx_rows);
      delta_up[n + 1] = diff::scale(diff::affine(ctx, unit.w_out, unit.b_out), unit.lambda_up);
    }
  }

  HierState<R> out;
  out.post_interaction = true;
  out.levels.reserve(depth);
  for (size_t n = 0; n < depth; ++n) {
    Tensor<R> level = state.levels[n];
    if (delta_down[n].data) level = diff::add(level, delta_down[n]);
    if (delta_up[n].data) level = diff::add(level, delta_up[n]);
    out.levels.push_back(std::move(level));
  }
  return out;
}

// Blocks applied in sequence; block i+1 consumes block i's output state as
// its tilde input.
template <class R>
HierState<R> pwt_stack(const HierState<R>& state, std::vector<PwtBlockParams<R>>& blocks,
                       size_t branching, AttnCounter* counter = nullptr) {
  if (blocks.empty()) throw ConfigError("pwt_stack: need at least one block");
  HierState<R> cur = state;
  for (auto& block : blocks) cur = pwt_block(cur, block, branching, counter);
  return cur;
}

// ---------------------------------------------------------------------------
// projection head: Linear(D_e) - ReLU - Linear(contrastive_dim)
// ---------------------------------------------------------------------------

template <class R>
struct ProjectionHeadParams {
  Tensor<R> w1, b1, w2, b2;

  static ProjectionHeadParams init(size_t d_e, size_t contrastive_dim, Rng& rng) {
    ProjectionHeadParams h;
    h.w1 = init::xavier_uniform<R>(d_e, d_e, rng);
    h.b1 = init::bias_uniform<R>(d_e, d_e, rng);
    h.w2 = init::xavier_uniform<R>(d_e, contrastive_dim, rng);
    h.b2 = init::bias_uniform<R>(d_e, contrastive_dim, rng);
    return h;
  }

  void register_params(diff::ParamRegistry<R>& reg, const std::string& prefix) {
    reg.add(prefix + "/w1", &w1);
    reg.add(prefix + "/b1", &b1);
    reg.add(prefix + "/w2", &w2);
    reg.add(prefix + "/b2", &b2);
  }
};

template <class R>
Tensor<R> project_head(const Tensor<R>& x, ProjectionHeadParams<R>& head) {
  const size_t in = x.rank() == 1 ? x.shape[0] : x.cols();
  if (in != head.w1.rows())
    throw DimensionError("project_head: input dim " + std::to_string(in) + " expected " +
                         std::to_string(head.w1.rows()));
  return diff::affine(diff::relu(diff::affine(x, head.w1, head.b1)), head.w2, head.b2);
}

// ---------------------------------------------------------------------------
// whole model
// ---------------------------------------------------------------------------

template <class R>
struct MartModel {
  EncoderParams<R> encoder;
  std::vector<PwtBlockParams<R>> pwt_blocks;
  ProjectionHeadParams<R> head;
  size_t branching = 2;
  size_t depth = 4;

  static MartModel init(size_t d_e, size_t d_t, size_t heads, size_t n_blocks, size_t branching,
                        size_t depth, size_t contrastive_dim,
                        std::span<const double> lambda_down, std::span<const double> lambda_up,
                        Rng& rng) {
    MartModel m;
    m.branching = branching;
    m.depth = depth;
    const std::vector<size_t> plan = encoder_channel_plan(d_e);
    m.encoder = EncoderParams<R>::init(plan, rng);
    for (size_t b = 0; b < n_blocks; ++b) {
      PwtBlockParams<R> blk;
      for (size_t n = 0; n + 1 < depth; ++n)
        blk.units.push_back(InteractionUnitParams<R>::init(
            d_e, d_t, heads, static_cast<R>(lambda_down[n]), static_cast<R>(lambda_up[n]), rng));
      m.pwt_blocks.push_back(std::move(blk));
    }
    m.head = ProjectionHeadParams<R>::init(d_e, contrastive_dim, rng);
    return m;
  }

  void register_params(diff::ParamRegistry<R>& reg) {
    encoder.register_params(reg, "enc");
    for (size_t b = 0; b < pwt_blocks.size(); ++b)
      pwt_blocks[b].register_params(reg, "pwt/block" + std::to_string(b));
    head.register_params(reg, "head");
  }
};

}  // namespace mart::model
