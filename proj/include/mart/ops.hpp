#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mart/tensor.hpp"

// Reverse-mode primitives. Each op computes eagerly and, when any input is
// tracked, appends one node whose closure accumulates into the input
// gradient buffers. Untracked inputs (node == -1) are constants.
namespace mart::diff {

namespace detail {

template <class R>
Tensor<R> make_like(const Tensor<R>& a, std::vector<R> values) {
  return Tensor<R>(a.shape, std::move(values));
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise suite
// ---------------------------------------------------------------------------

template <class R>
Tensor<R> add(const Tensor<R>& a, const Tensor<R>& b) {
  detail::check_same_shape(a.shape, b.shape, "add");
  std::vector<R> out(a.size());
  const R* pa = a.ptr();
  const R* pb = b.ptr();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  Tensor<R> y = detail::make_like(a, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a, &b})) {
    const int an = a.tracked() ? a.node : -1;
    const int bn = b.tracked() ? b.node : -1;
    const size_t n = y.size();
    y.tape = tp;
    y.node = tp->record(n, [an, bn, n](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      if (an >= 0) {
        auto& ga = t.grad_buffer(an, n);
        for (size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad_buffer(bn, n);
        for (size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return y;
}

template <class R>
Tensor<R> sub(const Tensor<R>& a, const Tensor<R>& b) {
  detail::check_same_shape(a.shape, b.shape, "sub");
  std::vector<R> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor<R> y = detail::make_like(a, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a, &b})) {
    const int an = a.tracked() ? a.node : -1;
    const int bn = b.tracked() ? b.node : -1;
    const size_t n = y.size();
    y.tape = tp;
    y.node = tp->record(n, [an, bn, n](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      if (an >= 0) {
        auto& ga = t.grad_buffer(an, n);
        for (size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad_buffer(bn, n);
        for (size_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

template <class R>
Tensor<R> mul(const Tensor<R>& a, const Tensor<R>& b) {
  detail::check_same_shape(a.shape, b.shape, "mul");
  std::vector<R> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor<R> y = detail::make_like(a, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a, &b})) {
    const int an = a.tracked() ? a.node : -1;
    const int bn = b.tracked() ? b.node : -1;
    const size_t n = y.size();
    auto da = a.data;
    auto db = b.data;
    y.tape = tp;
    y.node = tp->record(n, [an, bn, n, da, db](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      if (an >= 0) {
        auto& ga = t.grad_buffer(an, n);
        for (size_t i = 0; i < n; ++i) ga[i] += g[i] * (*db)[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad_buffer(bn, n);
        for (size_t i = 0; i < n; ++i) gb[i] += g[i] * (*da)[i];
      }
    });
  }
  return y;
}

template <class R>
Tensor<R> scale(const Tensor<R>& a, R c) {
  std::vector<R> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  Tensor<R> y = detail::make_like(a, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    const size_t n = y.size();
    y.tape = tp;
    y.node = tp->record(n, [an, n, c](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, n);
      for (size_t i = 0; i < n; ++i) ga[i] += g[i] * c;
    });
  }
  return y;
}

template <class R>
Tensor<R> exp(const Tensor<R>& a) {
  std::vector<R> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
  Tensor<R> y = detail::make_like(a, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    const size_t n = y.size();
    auto dy = y.data;
    y.tape = tp;
    y.node = tp->record(n, [an, n, dy](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, n);
      for (size_t i = 0; i < n; ++i) ga[i] += g[i] * (*dy)[i];
    });
  }
  return y;
}

template <class R>
Tensor<R> log(const Tensor<R>& a) {
  std::vector<R> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    if (!(a[i] > R(0)))
      throw DomainError("log: non-positive value " + std::to_string(static_cast<double>(a[i])) +
                        " at index " + std::to_string(i));
    out[i] = std::log(a[i]);
  }
  Tensor<R> y = detail::make_like(a, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    const size_t n = y.size();
    auto da = a.data;
    y.tape = tp;
    y.node = tp->record(n, [an, n, da](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, n);
      for (size_t i = 0; i < n; ++i) ga[i] += g[i] / (*da)[i];
    });
  }
  return y;
}

// rectifier max(x, 0)
template <class R>
Tensor<R> relu(const Tensor<R>& a) {
  std::vector<R> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] > R(0) ? a[i] : R(0);
  Tensor<R> y = detail::make_like(a, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    const size_t n = y.size();
    auto da = a.data;
    y.tape = tp;
    y.node = tp->record(n, [an, n, da](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, n);
      for (size_t i = 0; i < n; ++i)
        if ((*da)[i] > R(0)) ga[i] += g[i];
    });
  }
  return y;
}

template <class R>
Tensor<R> sigmoid(const Tensor<R>& a) {
  std::vector<R> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const R x = a[i];
    out[i] = x >= R(0) ? R(1) / (R(1) + std::exp(-x)) : std::exp(x) / (R(1) + std::exp(x));
  }
  Tensor<R> y = detail::make_like(a, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    const size_t n = y.size();
    auto dy = y.data;
    y.tape = tp;
    y.node = tp->record(n, [an, n, dy](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, n);
      for (size_t i = 0; i < n; ++i) {
        const R s = (*dy)[i];
        ga[i] += g[i] * s * (R(1) - s);
      }
    });
  }
  return y;
}

// log(1 + exp(x)), overflow-safe
template <class R>
Tensor<R> softplus(const Tensor<R>& a) {
  std::vector<R> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const R x = a[i];
    out[i] = std::max(x, R(0)) + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor<R> y = detail::make_like(a, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    const size_t n = y.size();
    auto da = a.data;
    y.tape = tp;
    y.node = tp->record(n, [an, n, da](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, n);
      for (size_t i = 0; i < n; ++i) {
        const R x = (*da)[i];
        const R s = x >= R(0) ? R(1) / (R(1) + std::exp(-x)) : std::exp(x) / (R(1) + std::exp(x));
        ga[i] += g[i] * s;
      }
    });
  }
  return y;
}

template <class R>
Tensor<R> sum(const Tensor<R>& a) {
  R acc(0);
  for (size_t i = 0; i < a.size(); ++i) acc += a[i];
  Tensor<R> y(Shape{1}, {acc});
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    const size_t n = a.size();
    y.tape = tp;
    y.node = tp->record(1, [an, n](Tape<R>& t, int self) {
      const R g = t.grads(self)[0];
      auto& ga = t.grad_buffer(an, n);
      for (size_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return y;
}

template <class R>
Tensor<R> mean(const Tensor<R>& a) {
  R acc(0);
  for (size_t i = 0; i < a.size(); ++i) acc += a[i];
  const R inv = R(1) / static_cast<R>(a.size());
  Tensor<R> y(Shape{1}, {acc * inv});
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    const size_t n = a.size();
    y.tape = tp;
    y.node = tp->record(1, [an, n, inv](Tape<R>& t, int self) {
      const R g = t.grads(self)[0] * inv;
      auto& ga = t.grad_buffer(an, n);
      for (size_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// structure ops
// ---------------------------------------------------------------------------

template <class R>
Tensor<R> reshape(const Tensor<R>& a, Shape s) {
  if (numel(s) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape) + " as " + shape_str(s));
  Tensor<R> y;
  y.shape = std::move(s);
  y.data = a.data;  // buffers are immutable once wrapped
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    const size_t n = a.size();
    y.tape = tp;
    y.node = tp->record(n, [an, n](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, n);
      for (size_t i = 0; i < n; ++i) ga[i] += g[i];
    });
  }
  return y;
}

template <class R>
Tensor<R> row(const Tensor<R>& a, size_t r) {
  const size_t rows = a.rows(), cols = a.cols();
  if (r >= rows)
    throw DimensionError("row: index " + std::to_string(r) + " out of range for " +
                         shape_str(a.shape));
  std::vector<R> out(a.ptr() + r * cols, a.ptr() + (r + 1) * cols);
  Tensor<R> y(Shape{cols}, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    const size_t n = rows * cols;
    y.tape = tp;
    y.node = tp->record(cols, [an, n, r, cols](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, n);
      for (size_t j = 0; j < cols; ++j) ga[r * cols + j] += g[j];
    });
  }
  return y;
}

template <class R>
Tensor<R> slice_rows(const Tensor<R>& a, size_t r0, size_t r1) {
  const size_t rows = a.rows(), cols = a.cols();
  if (r0 >= r1 || r1 > rows)
    throw DimensionError("slice_rows: bad range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") for " + shape_str(a.shape));
  std::vector<R> out(a.ptr() + r0 * cols, a.ptr() + r1 * cols);
  Tensor<R> y(Shape{r1 - r0, cols}, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    const size_t n = rows * cols;
    const size_t m = (r1 - r0) * cols;
    y.tape = tp;
    y.node = tp->record(m, [an, n, r0, cols, m](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, n);
      for (size_t i = 0; i < m; ++i) ga[r0 * cols + i] += g[i];
    });
  }
  return y;
}

template <class R>
Tensor<R> slice_cols(const Tensor<R>& a, size_t c0, size_t c1) {
  const size_t rows = a.rows(), cols = a.cols();
  if (c0 >= c1 || c1 > cols)
    throw DimensionError("slice_cols: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + shape_str(a.shape));
  const size_t w = c1 - c0;
  std::vector<R> out(rows * w);
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < w; ++j) out[i * w + j] = a[i * cols + c0 + j];
  Tensor<R> y(Shape{rows, w}, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    y.tape = tp;
    y.node = tp->record(rows * w, [an, rows, cols, c0, w](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, rows * cols);
      for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < w; ++j) ga[i * cols + c0 + j] += g[i * w + j];
    });
  }
  return y;
}

// Vertical stack. Accepts 1-D tensors (one row each) and 2-D tensors with a
// common column count.
template <class R>
Tensor<R> concat_rows(const std::vector<Tensor<R>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const size_t cols = parts[0].rank() == 1 ? parts[0].shape[0] : parts[0].cols();
  size_t rows = 0;
  for (const auto& p : parts) {
    const size_t pc = p.rank() == 1 ? p.shape[0] : p.cols();
    if (p.rank() > 2 || pc != cols)
      throw DimensionError("concat_rows: incompatible part " + shape_str(p.shape));
    rows += p.rank() == 1 ? 1 : p.rows();
  }
  std::vector<R> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.ptr(), p.ptr() + p.size());
  Tensor<R> y(Shape{rows, cols}, std::move(out));

  Tape<R>* tp = nullptr;
  for (const auto& p : parts) {
    if (!p.tracked()) continue;
    if (tp && tp != p.tape) throw DomainError("concat_rows: inputs on different tapes");
    tp = p.tape;
  }
  if (tp) {
    struct Piece {
      int node;
      size_t offset, count;
    };
    std::vector<Piece> pieces;
    size_t off = 0;
    for (const auto& p : parts) {
      if (p.tracked()) pieces.push_back({p.node, off, p.size()});
      off += p.size();
    }
    const size_t total = rows * cols;
    y.tape = tp;
    y.node = tp->record(total, [pieces](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      for (const auto& pc : pieces) {
        auto& ga = t.grad_buffer(pc.node, pc.count);
        for (size_t i = 0; i < pc.count; ++i) ga[i] += g[pc.offset + i];
      }
    });
  }
  return y;
}

// Horizontal concatenation of 2-D tensors with a common row count.
template <class R>
Tensor<R> concat_cols(const std::vector<Tensor<R>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const size_t rows = parts[0].rows();
  size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows)
      throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape));
    cols += p.cols();
  }
  std::vector<R> out(rows * cols);
  size_t coff = 0;
  for (const auto& p : parts) {
    const size_t w = p.cols();
    for (size_t i = 0; i < rows; ++i)
      for (size_t j = 0; j < w; ++j) out[i * cols + coff + j] = p[i * w + j];
    coff += w;
  }
  Tensor<R> y(Shape{rows, cols}, std::move(out));

  Tape<R>* tp = nullptr;
  for (const auto& p : parts) {
    if (!p.tracked()) continue;
    if (tp && tp != p.tape) throw DomainError("concat_cols: inputs on different tapes");
    tp = p.tape;
  }
  if (tp) {
    struct Piece {
      int node;
      size_t coff, w;
    };
    std::vector<Piece> pieces;
    size_t off = 0;
    for (const auto& p : parts) {
      if (p.tracked()) pieces.push_back({p.node, off, p.cols()});
      off += p.cols();
    }
    y.tape = tp;
    y.node = tp->record(rows * cols, [pieces, rows, cols](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      for (const auto& pc : pieces) {
        auto& ga = t.grad_buffer(pc.node, rows * pc.w);
        for (size_t i = 0; i < rows; ++i)
          for (size_t j = 0; j < pc.w; ++j) ga[i * pc.w + j] += g[i * cols + pc.coff + j];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// out[m x n] += a[m x k] * b[k x n], plain accumulation, vectorizes over n.
template <class R>
void gemm_acc(const R* a, const R* b, R* out, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    R* orow = out + i * n;
    const R* arow = a + i * k;
    for (size_t kk = 0; kk < k; ++kk) {
      const R av = arow[kk];
      const R* brow = b + kk * n;
      for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x k] += g[m x n] * b^T where b is [k x n]
template <class R>
void gemm_nt_acc(const R* g, const R* b, R* out, size_t m, size_t n, size_t k) {
  for (size_t i = 0; i < m; ++i) {
    const R* grow = g + i * n;
    R* orow = out + i * k;
    for (size_t kk = 0; kk < k; ++kk) {
      const R* brow = b + kk * n;
      R acc(0);
      for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      orow[kk] += acc;
    }
  }
}

// out[k x n] += a^T * g where a is [m x k], g is [m x n]
template <class R>
void gemm_tn_acc(const R* a, const R* g, R* out, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const R* arow = a + i * k;
    const R* grow = g + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      const R av = arow[kk];
      R* orow = out + kk * n;
      for (size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

}  // namespace detail

template <class R>
Tensor<R> matmul(const Tensor<R>& a, const Tensor<R>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
  const size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<R> out(m * n, R(0));
  detail::gemm_acc(a.ptr(), b.ptr(), out.data(), m, k, n);
  Tensor<R> y(Shape{m, n}, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a, &b})) {
    const int an = a.tracked() ? a.node : -1;
    const int bn = b.tracked() ? b.node : -1;
    auto da = a.data;
    auto db = b.data;
    y.tape = tp;
    y.node = tp->record(m * n, [an, bn, da, db, m, k, n](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      if (an >= 0) {
        auto& ga = t.grad_buffer(an, m * k);
        detail::gemm_nt_acc(g.data(), db->data(), ga.data(), m, n, k);
      }
      if (bn >= 0) {
        auto& gb = t.grad_buffer(bn, k * n);
        detail::gemm_tn_acc(da->data(), g.data(), gb.data(), m, k, n);
      }
    });
  }
  return y;
}

template <class R>
Tensor<R> transpose(const Tensor<R>& a) {
  const size_t m = a.rows(), n = a.cols();
  std::vector<R> out(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  Tensor<R> y(Shape{n, m}, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    y.tape = tp;
    y.node = tp->record(m * n, [an, m, n](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, m * n);
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return y;
}

// a[m x n] + v[n] broadcast over rows
template <class R>
Tensor<R> add_rowvec(const Tensor<R>& a, const Tensor<R>& v) {
  if (a.rank() != 2 || v.rank() != 1 || v.shape[0] != a.cols())
    throw DimensionError("add_rowvec: shapes " + shape_str(a.shape) + " + " +
                         shape_str(v.shape));
  const size_t m = a.rows(), n = a.cols();
  std::vector<R> out(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + v[j];
  Tensor<R> y(Shape{m, n}, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a, &v})) {
    const int an = a.tracked() ? a.node : -1;
    const int vn = v.tracked() ? v.node : -1;
    y.tape = tp;
    y.node = tp->record(m * n, [an, vn, m, n](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      if (an >= 0) {
        auto& ga = t.grad_buffer(an, m * n);
        for (size_t i = 0; i < m * n; ++i) ga[i] += g[i];
      }
      if (vn >= 0) {
        auto& gv = t.grad_buffer(vn, n);
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

// Softmax along `axis` of a 1-D or 2-D tensor (1-D treated as a single row,
// axis ignored). Stabilized by max subtraction; rejects non-finite input.
template <class R>
Tensor<R> softmax(const Tensor<R>& a, int axis = -1) {
  if (a.rank() == 1) {
    Tensor<R> m2 = reshape(a, Shape{1, a.shape[0]});
    Tensor<R> s = softmax(m2, 1);
    return reshape(s, a.shape);
  }
  if (a.rank() != 2) throw DimensionError("softmax: expected 1-D or 2-D tensor");
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  if (axis != 1 && axis != -1) throw DimensionError("softmax: axis out of range");

  const size_t m = a.rows(), n = a.cols();
  if (!a.all_finite()) throw DomainError("softmax: non-finite input");
  std::vector<R> out(m * n);
  for (size_t i = 0; i < m; ++i) {
    const R* x = a.ptr() + i * n;
    R mx = x[0];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    R tot(0);
    for (size_t j = 0; j < n; ++j) {
      const R e = std::exp(x[j] - mx);
      out[i * n + j] = e;
      tot += e;
    }
    const R inv = R(1) / tot;
    for (size_t j = 0; j < n; ++j) out[i * n + j] *= inv;
  }
  Tensor<R> y(Shape{m, n}, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&a})) {
    const int an = a.node;
    auto dy = y.data;
    y.tape = tp;
    y.node = tp->record(m * n, [an, dy, m, n](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& ga = t.grad_buffer(an, m * n);
      for (size_t i = 0; i < m; ++i) {
        const R* yrow = dy->data() + i * n;
        const R* grow = g.data() + i * n;
        R dot(0);
        for (size_t j = 0; j < n; ++j) dot += grow[j] * yrow[j];
        for (size_t j = 0; j < n; ++j) ga[i * n + j] += yrow[j] * (grow[j] - dot);
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// cosine similarity
// ---------------------------------------------------------------------------

template <class R>
Tensor<R> cosine_sim(const Tensor<R>& u, const Tensor<R>& v) {
  if (u.rank() != 1 || v.rank() != 1 || u.shape != v.shape)
    throw DimensionError("cosine_sim: expected equal-length vectors, got " +
                         shape_str(u.shape) + " and " + shape_str(v.shape));
  const size_t d = u.shape[0];
  R dot(0), nu2(0), nv2(0);
  for (size_t i = 0; i < d; ++i) {
    dot += u[i] * v[i];
    nu2 += u[i] * u[i];
    nv2 += v[i] * v[i];
  }
  if (nu2 == R(0) || nv2 == R(0))
    throw DomainError("cosine_sim: zero-norm input vector");
  const R nu = std::sqrt(nu2), nv = std::sqrt(nv2);
  const R s = dot / (nu * nv);
  Tensor<R> y(Shape{1}, {s});
  if (Tape<R>* tp = detail::tape_of<R>({&u, &v})) {
    const int un = u.tracked() ? u.node : -1;
    const int vn = v.tracked() ? v.node : -1;
    auto du = u.data;
    auto dv = v.data;
    y.tape = tp;
    y.node = tp->record(1, [un, vn, du, dv, d, nu, nv, s](Tape<R>& t, int self) {
      const R g = t.grads(self)[0];
      if (un >= 0) {
        auto& gu = t.grad_buffer(un, d);
        const R a = R(1) / (nu * nv), b = s / (nu * nu);
        for (size_t i = 0; i < d; ++i) gu[i] += g * ((*dv)[i] * a - (*du)[i] * b);
      }
      if (vn >= 0) {
        auto& gv = t.grad_buffer(vn, d);
        const R a = R(1) / (nu * nv), b = s / (nv * nv);
        for (size_t i = 0; i < d; ++i) gv[i] += g * ((*du)[i] * a - (*dv)[i] * b);
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// convolution / pooling / normalization (single instance, CHW layout)
// ---------------------------------------------------------------------------

namespace detail {

// dst += 3x3 cross-correlation of src with k, zero padding 1. One pass per
// plane: every output element gathers all nine taps in a single expression,
// which keeps the loop a straight run of fused multiply-adds.
template <class R>
void acc_corr3x3(const R* src, const R* k, R* dst, size_t h, size_t w) {
  const R k0 = k[0], k1 = k[1], k2 = k[2];
  const R k3 = k[3], k4 = k[4], k5 = k[5];
  const R k6 = k[6], k7 = k[7], k8 = k[8];
  for (size_t y = 0; y < h; ++y) {
    const R* up = y > 0 ? src + (y - 1) * w : nullptr;
    const R* mid = src + y * w;
    const R* dn = y + 1 < h ? src + (y + 1) * w : nullptr;
    R* out = dst + y * w;
    // left border
    {
      R acc = k4 * mid[0];
      if (w > 1) acc += k5 * mid[1];
      if (up) {
        acc += k1 * up[0];
        if (w > 1) acc += k2 * up[1];
      }
      if (dn) {
        acc += k7 * dn[0];
        if (w > 1) acc += k8 * dn[1];
      }
      out[0] += acc;
    }
    if (w == 1) continue;
    // interior, one fused pass
    if (up && dn) {
      for (size_t x = 1; x + 1 < w; ++x)
        out[x] += k0 * up[x - 1] + k1 * up[x] + k2 * up[x + 1] + k3 * mid[x - 1] +
                  k4 * mid[x] + k5 * mid[x + 1] + k6 * dn[x - 1] + k7 * dn[x] +
                  k8 * dn[x + 1];
    } else if (up) {
      for (size_t x = 1; x + 1 < w; ++x)
        out[x] += k0 * up[x - 1] + k1 * up[x] + k2 * up[x + 1] + k3 * mid[x - 1] +
                  k4 * mid[x] + k5 * mid[x + 1];
    } else if (dn) {
      for (size_t x = 1; x + 1 < w; ++x)
        out[x] += k3 * mid[x - 1] + k4 * mid[x] + k5 * mid[x + 1] + k6 * dn[x - 1] +
                  k7 * dn[x] + k8 * dn[x + 1];
    } else {
      for (size_t x = 1; x + 1 < w; ++x)
        out[x] += k3 * mid[x - 1] + k4 * mid[x] + k5 * mid[x + 1];
    }
    // right border
    {
      const size_t x = w - 1;
      R acc = k3 * mid[x - 1] + k4 * mid[x];
      if (up) acc += k0 * up[x - 1] + k1 * up[x];
      if (dn) acc += k6 * dn[x - 1] + k7 * dn[x];
      out[x] += acc;
    }
  }
}

template <class R>
void conv3x3_forward(const R* x, const R* k, R* y, size_t ci_n, size_t co_n, size_t h,
                     size_t w) {
  for (size_t co = 0; co < co_n; ++co) {
    R* yplane = y + co * h * w;
    for (size_t ci = 0; ci < ci_n; ++ci)
      acc_corr3x3(x + ci * h * w, k + (co * ci_n + ci) * 9, yplane, h, w);
  }
}

}  // namespace detail

// conv2d with 3x3 kernels, zero padding 1, stride 1; input [Cin x H x W],
// kernels [Cout x Cin x 3 x 3] -> [Cout x H x W].
template <class R>
Tensor<R> conv2d(const Tensor<R>& x, const Tensor<R>& k) {
  if (x.rank() != 3) throw DimensionError("conv2d: input must be CxHxW, got " + shape_str(x.shape));
  if (k.rank() != 4 || k.shape[2] != 3 || k.shape[3] != 3)
    throw DimensionError("conv2d: kernels must be CoutxCinx3x3, got " + shape_str(k.shape));
  if (k.shape[1] != x.shape[0])
    throw DimensionError("conv2d: channel mismatch, input " + shape_str(x.shape) +
                         " vs kernels " + shape_str(k.shape));
  const size_t ci_n = x.shape[0], h = x.shape[1], w = x.shape[2], co_n = k.shape[0];
  std::vector<R> out(co_n * h * w, R(0));
  detail::conv3x3_forward(x.ptr(), k.ptr(), out.data(), ci_n, co_n, h, w);
  Tensor<R> y(Shape{co_n, h, w}, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&x, &k})) {
    const int xn = x.tracked() ? x.node : -1;
    const int kn = k.tracked() ? k.node : -1;
    auto dx = x.data;
    auto dk = k.data;
    y.tape = tp;
    y.node = tp->record(co_n * h * w, [xn, kn, dx, dk, ci_n, co_n, h, w](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      if (kn >= 0) {
        auto& gk = t.grad_buffer(kn, co_n * ci_n * 9);
        for (size_t co = 0; co < co_n; ++co) {
          const R* gplane = g.data() + co * h * w;
          for (size_t ci = 0; ci < ci_n; ++ci) {
            const R* xplane = dx->data() + ci * h * w;
            R* kk = gk.data() + (co * ci_n + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const int dy = ky - 1, dxo = kx - 1;
                const size_t y0 = dy < 0 ? 1 : 0;
                const size_t y1 = dy > 0 ? h - 1 : h;
                const size_t x0 = dxo < 0 ? 1 : 0;
                const size_t x1 = dxo > 0 ? w - 1 : w;
                // eight-lane accumulators keep the dot product vectorizable
                // without licensing reassociation elsewhere
                R lanes[8] = {R(0), R(0), R(0), R(0), R(0), R(0), R(0), R(0)};
                R tail(0);
                for (size_t yy = y0; yy < y1; ++yy) {
                  const R* grow = gplane + yy * w;
                  const R* xrow = xplane + (yy + dy) * w + dxo;
                  size_t xx = x0;
                  for (; xx + 8 <= x1; xx += 8)
                    for (int l = 0; l < 8; ++l) lanes[l] += grow[xx + l] * xrow[xx + l];
                  for (; xx < x1; ++xx) tail += grow[xx] * xrow[xx];
                }
                R acc = tail;
                for (int l = 0; l < 8; ++l) acc += lanes[l];
                kk[ky * 3 + kx] += acc;
              }
            }
          }
        }
      }
      if (xn >= 0) {
        auto& gx = t.grad_buffer(xn, ci_n * h * w);
        // dX is the correlation of the output gradient with flipped kernels
        for (size_t co = 0; co < co_n; ++co) {
          const R* gplane = g.data() + co * h * w;
          for (size_t ci = 0; ci < ci_n; ++ci) {
            const R* kk = dk->data() + (co * ci_n + ci) * 9;
            R flipped[9];
            for (int i = 0; i < 9; ++i) flipped[i] = kk[8 - i];
            detail::acc_corr3x3(gplane, flipped, gx.data() + ci * h * w, h, w);
          }
        }
      }
    });
  }
  return y;
}

// Max pooling with square window and matching stride; spatial dims must be
// divisible by the window. Backward routes the gradient to the argmax.
template <class R>
Tensor<R> maxpool2d(const Tensor<R>& x, size_t window = 2) {
  if (x.rank() != 3)
    throw DimensionError("maxpool2d: input must be CxHxW, got " + shape_str(x.shape));
  const size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  if (window == 0 || window > h || window > w)
    throw DimensionError("maxpool2d: window " + std::to_string(window) +
                         " larger than spatial dims of " + shape_str(x.shape));
  if (h % window != 0 || w % window != 0)
    throw DimensionError("maxpool2d: spatial dims of " + shape_str(x.shape) +
                         " not divisible by window " + std::to_string(window));
  const size_t oh = h / window, ow = w / window;
  std::vector<R> out(c * oh * ow);
  auto argmax = std::make_shared<std::vector<uint32_t>>(c * oh * ow);
  for (size_t cc = 0; cc < c; ++cc) {
    const R* xp = x.ptr() + cc * h * w;
    for (size_t oy = 0; oy < oh; ++oy) {
      for (size_t ox = 0; ox < ow; ++ox) {
        size_t best = (oy * window) * w + ox * window;
        R bv = xp[best];
        for (size_t dy = 0; dy < window; ++dy) {
          for (size_t dx = 0; dx < window; ++dx) {
            const size_t idx = (oy * window + dy) * w + ox * window + dx;
            if (xp[idx] > bv) {
              bv = xp[idx];
              best = idx;
            }
          }
        }
        out[(cc * oh + oy) * ow + ox] = bv;
        (*argmax)[(cc * oh + oy) * ow + ox] = static_cast<uint32_t>(cc * h * w + best);
      }
    }
  }
  Tensor<R> y(Shape{c, oh, ow}, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&x})) {
    const int xn = x.node;
    const size_t xin = c * h * w;
    const size_t n = c * oh * ow;
    y.tape = tp;
    y.node = tp->record(n, [xn, xin, n, argmax](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& gx = t.grad_buffer(xn, xin);
      for (size_t i = 0; i < n; ++i) gx[(*argmax)[i]] += g[i];
    });
  }
  return y;
}

// Batch normalization over the spatial positions of one CxHxW instance.
// Training mode normalizes with batch statistics and updates the running
// stats in place (running stats are state, not differentiated); eval mode
// normalizes with the running stats.
template <class R>
Tensor<R> batchnorm2d(const Tensor<R>& x, const Tensor<R>& gamma, const Tensor<R>& beta,
                      Tensor<R>& running_mean, Tensor<R>& running_var, bool training,
                      R momentum = R(0.1), R eps = R(1e-5)) {
  if (x.rank() != 3)
    throw DimensionError("batchnorm2d: input must be CxHxW, got " + shape_str(x.shape));
  const size_t c = x.shape[0], h = x.shape[1], w = x.shape[2], hw = h * w;
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c ||
      running_var.size() != c)
    throw DimensionError("batchnorm2d: parameter length mismatch for " + shape_str(x.shape));

  std::vector<R> out(c * hw);
  auto mu = std::make_shared<std::vector<R>>(c);
  auto inv_sigma = std::make_shared<std::vector<R>>(c);
  for (size_t cc = 0; cc < c; ++cc) {
    const R* xp = x.ptr() + cc * hw;
    R m, var;
    if (training) {
      R s(0);
      for (size_t i = 0; i < hw; ++i) s += xp[i];
      m = s / static_cast<R>(hw);
      R v(0);
      for (size_t i = 0; i < hw; ++i) {
        const R d = xp[i] - m;
        v += d * d;
      }
      var = v / static_cast<R>(hw);
      // running stats keep the unbiased estimate (population convention)
      const R unbiased = hw > 1 ? v / static_cast<R>(hw - 1) : var;
      running_mean[cc] = (R(1) - momentum) * running_mean[cc] + momentum * m;
      running_var[cc] = (R(1) - momentum) * running_var[cc] + momentum * unbiased;
    } else {
      m = running_mean[cc];
      var = running_var[cc];
    }
    const R is = R(1) / std::sqrt(var + eps);
    (*mu)[cc] = m;
    (*inv_sigma)[cc] = is;
    const R g = gamma[cc], b = beta[cc];
    R* yp = out.data() + cc * hw;
    for (size_t i = 0; i < hw; ++i) yp[i] = (xp[i] - m) * is * g + b;
  }
  Tensor<R> y(Shape{c, h, w}, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&x, &gamma, &beta})) {
    const int xn = x.tracked() ? x.node : -1;
    const int gn = gamma.tracked() ? gamma.node : -1;
    const int bn = beta.tracked() ? beta.node : -1;
    auto dx = x.data;
    auto dgamma = gamma.data;
    y.tape = tp;
    y.node = tp->record(c * hw, [xn, gn, bn, dx, dgamma, mu, inv_sigma, c, hw,
                                 training](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      for (size_t cc = 0; cc < c; ++cc) {
        const R* xp = dx->data() + cc * hw;
        const R* gp = g.data() + cc * hw;
        const R m = (*mu)[cc], is = (*inv_sigma)[cc], gam = (*dgamma)[cc];
        R sum_g(0), sum_gx(0);
        for (size_t i = 0; i < hw; ++i) {
          const R xh = (xp[i] - m) * is;
          sum_g += gp[i];
          sum_gx += gp[i] * xh;
        }
        if (gn >= 0) t.grad_buffer(gn, c)[cc] += sum_gx;
        if (bn >= 0) t.grad_buffer(bn, c)[cc] += sum_g;
        if (xn >= 0) {
          auto& gx = t.grad_buffer(xn, c * hw);
          R* gxp = gx.data() + cc * hw;
          if (training) {
            const R inv_n = R(1) / static_cast<R>(hw);
            for (size_t i = 0; i < hw; ++i) {
              const R xh = (xp[i] - m) * is;
              gxp[i] += gam * is * (gp[i] - sum_g * inv_n - xh * sum_gx * inv_n);
            }
          } else {
            for (size_t i = 0; i < hw; ++i) gxp[i] += gam * is * gp[i];
          }
        }
      }
    });
  }
  return y;
}

// Global average pool: mean over the spatial positions of each channel.
template <class R>
Tensor<R> spatial_mean(const Tensor<R>& x) {
  if (x.rank() != 3)
    throw DimensionError("spatial_mean: input must be CxHxW, got " + shape_str(x.shape));
  const size_t c = x.shape[0], hw = x.shape[1] * x.shape[2];
  std::vector<R> out(c);
  const R inv = R(1) / static_cast<R>(hw);
  for (size_t cc = 0; cc < c; ++cc) {
    R s(0);
    const R* xp = x.ptr() + cc * hw;
    for (size_t i = 0; i < hw; ++i) s += xp[i];
    out[cc] = s * inv;
  }
  Tensor<R> y(Shape{c}, std::move(out));
  if (Tape<R>* tp = detail::tape_of<R>({&x})) {
    const int xn = x.node;
    y.tape = tp;
    y.node = tp->record(c, [xn, c, hw, inv](Tape<R>& t, int self) {
      const auto& g = t.grads(self);
      auto& gx = t.grad_buffer(xn, c * hw);
      for (size_t cc = 0; cc < c; ++cc) {
        const R gv = g[cc] * inv;
        R* gxp = gx.data() + cc * hw;
        for (size_t i = 0; i < hw; ++i) gxp[i] += gv;
      }
    });
  }
  return y;
}

// x @ w + b with b broadcast over rows; accepts a 1-D x as a single row.
template <class R>
Tensor<R> affine(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>& b) {
  Tensor<R> xm = x.rank() == 1 ? reshape(x, Shape{1, x.shape[0]}) : x;
  Tensor<R> y = add_rowvec(matmul(xm, w), b);
  if (x.rank() == 1) return reshape(y, Shape{y.cols()});
  return y;
}

}  // namespace mart::diff
