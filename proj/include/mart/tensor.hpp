#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "mart/common.hpp"

namespace mart::diff {

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class R>
class Tape;

// Dense row-major tensor. The value buffer is shared and treated as
// immutable once it participates in a recorded operation; parameters are
// mutated only between tapes (optimizer steps).
template <class R>
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<R>> data;
  Tape<R>* tape = nullptr;
  int node = -1;

  Tensor() = default;

  Tensor(Shape s, std::vector<R> values)
      : shape(std::move(s)), data(std::make_shared<std::vector<R>>(std::move(values))) {
    if (numel(shape) != data->size())
      throw DimensionError("Tensor: shape " + shape_str(shape) + " does not match " +
                           std::to_string(data->size()) + " values");
    for (size_t d : shape)
      if (d == 0) throw DimensionError("Tensor: zero dimension in " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    size_t n = numel(s);
    return Tensor(std::move(s), std::vector<R>(n, R(0)));
  }

  static Tensor full(Shape s, R v) {
    size_t n = numel(s);
    return Tensor(std::move(s), std::vector<R>(n, v));
  }

  static Tensor vector(std::vector<R> values) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values));
  }

  static Tensor matrix(size_t r, size_t c, std::vector<R> values) {
    return Tensor(Shape{r, c}, std::move(values));
  }

  size_t size() const { return data ? data->size() : 0; }
  size_t rank() const { return shape.size(); }

  size_t rows() const {
    if (rank() != 2) throw DimensionError("rows: tensor is not 2-D, shape " + shape_str(shape));
    return shape[0];
  }
  size_t cols() const {
    if (rank() != 2) throw DimensionError("cols: tensor is not 2-D, shape " + shape_str(shape));
    return shape[1];
  }

  R* ptr() { return data->data(); }
  const R* ptr() const { return data->data(); }

  R& operator[](size_t i) { return (*data)[i]; }
  const R& operator[](size_t i) const { return (*data)[i]; }

  R& at(size_t r, size_t c) { return (*data)[r * shape[1] + c]; }
  const R& at(size_t r, size_t c) const { return (*data)[r * shape[1] + c]; }

  bool tracked() const { return tape != nullptr && node >= 0; }

  void detach() {
    tape = nullptr;
    node = -1;
  }

  bool all_finite() const {
    for (const R& v : *data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

// Append-only computation record. One tape per training step; nodes are
// visited exactly once in reverse append order during backward().
template <class R>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  // Registers a leaf whose gradient should be accumulated.
  int watch(Tensor<R>& t) {
    if (!t.data) throw DomainError("Tape::watch: empty tensor");
    t.tape = this;
    t.node = record(t.size(), nullptr);
    return t.node;
  }

  // Used by ops: appends a node and returns its id.
  int record(size_t out_numel, BackFn back) {
    nodes_.push_back(Node{std::move(back), out_numel});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void backward(const Tensor<R>& loss) {
    if (loss.size() != 1) throw DimensionError("Tape::backward: loss must be scalar");
    if (loss.tape != this || loss.node < 0)
      throw DomainError("Tape::backward: loss is not recorded on this tape");
    grads_.assign(nodes_.size(), {});
    grads_[loss.node] = {R(1)};
    for (int i = loss.node; i >= 0; --i) {
      if (grads_[i].empty()) continue;  // no path to the loss
      if (nodes_[i].back) nodes_[i].back(*this, i);
    }
    ran_backward_ = true;
  }

  // Gradient buffer for a node; allocated (zero-filled) on first touch.
  std::vector<R>& grad_buffer(int node, size_t n) {
    auto& g = grads_[node];
    if (g.empty()) g.assign(n, R(0));
    return g;
  }

  const std::vector<R>& grads(int node) const { return grads_[node]; }

  // Gradient of a watched (or intermediate) tensor after backward().
  // Tensors that never influenced the loss get a zero gradient.
  const std::vector<R>& grad(const Tensor<R>& t) {
    if (!ran_backward_) throw DomainError("Tape::grad: backward() has not run");
    if (t.tape != this || t.node < 0)
      throw DomainError("Tape::grad: tensor is not on this tape");
    auto& g = grads_[t.node];
    if (g.empty()) g.assign(t.size(), R(0));
    return g;
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    BackFn back;  // nullptr for leaves
    size_t n;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<R>> grads_;
  bool ran_backward_ = false;
};

namespace detail {

// Resolves the tape shared by a set of inputs; throws if two inputs carry
// different live tapes.
template <class R>
Tape<R>* tape_of(std::initializer_list<const Tensor<R>*> ts) {
  Tape<R>* t = nullptr;
  for (const Tensor<R>* x : ts) {
    if (!x->tracked()) continue;
    if (t != nullptr && t != x->tape)
      throw DomainError("operation inputs belong to different tapes");
    t = x->tape;
  }
  return t;
}

}  // namespace detail

}  // namespace mart::diff
