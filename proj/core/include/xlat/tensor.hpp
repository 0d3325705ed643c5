#pragma once
// Dense float64 tensors with reverse-mode automatic differentiation.
//
// Tensors are immutable values; an operation never mutates its operands.  A
// Tape records every operation whose result depends on a registered leaf, in
// topological order (operand ids strictly below result ids).  backward() walks
// the tape once in reverse and returns gradients for every leaf.
//
// Layout is row-major.  Elementwise binary ops broadcast when one operand's
// shape is a suffix of the other's (the smaller tensor is tiled over the
// leading axes); a rank-0 tensor therefore broadcasts everywhere.  Any
// operation producing a non-finite value raises instead of propagating it.

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "xlat/errors.hpp"

namespace xlat::nd {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Matmul,
  Transpose,
  Exp,
  Log,
  Tanh,
  Sigmoid,
  Softmax,
  LogSoftmax,
  Sum,
  Mean,
  Concat,
  Slice,
  Reshape,
  Embedding,
  MaskedFill,
  LayerNorm,
  CrossEntropyRows,
  Clamp,
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  // Off-tape value (no gradient ever flows into it).
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  // Differentiable input registered on `tape`.
  static Tensor leaf(Shape shape, std::vector<double> values, Tape& tape);

  const Shape& shape() const { return shape_; }
  int64_t numel() const;
  const std::vector<double>& values() const { return *values_; }
  double item() const;  // NotScalar unless numel() == 1
  bool defined() const { return values_ != nullptr; }
  bool on_tape() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  friend Tensor finish_op(OpKind op, const char* name, Shape shape,
                          std::vector<double> values, Tape* tape,
                          std::vector<int> inputs,
                          std::function<void(const std::vector<double>&,
                                             std::vector<std::vector<double>>&)>
                              fn);

  std::shared_ptr<const std::vector<double>> values_;
  Shape shape_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// node id -> gradient buffer (same length as the node's value).
using GradMap = std::unordered_map<int, std::vector<double>>;

class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>& upstream,
                                        std::vector<std::vector<double>>& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Runs one reverse sweep from `loss` (a scalar on this tape) and returns
  // gradients for every leaf; leaves unreachable from the loss get zeros.
  // A tape supports exactly one backward sweep.
  GradMap backward(const Tensor& loss);

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  OpKind op_at(int node) const { return nodes_.at(node).op; }
  const std::vector<int>& inputs_at(int node) const {
    return nodes_.at(node).inputs;
  }

 private:
  friend class Tensor;
  friend Tensor finish_op(OpKind op, const char* name, Shape shape,
                          std::vector<double> values, Tape* tape,
                          std::vector<int> inputs, BackwardFn fn);

  int record(OpKind op, std::vector<int> inputs, int64_t numel, BackwardFn fn);

  struct Node {
    OpKind op;
    std::vector<int> inputs;
    int64_t numel;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<int, int64_t>> leaves_;  // (node id, numel)
  bool consumed_ = false;
};

// -- operator catalog ---------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D x 2-D
Tensor transpose(const Tensor& a);                // 2-D
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);
Tensor sum(const Tensor& a);            // all elements -> rank 0
Tensor sum(const Tensor& a, int axis);  // removes `axis`
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor reshape(const Tensor& a, Shape shape);
// Gathers rows of `table` ([V, d]) at `ids`; gradients scatter-add back.
Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids);
// Replaces elements where mask != 0 by `value`; gradient is zero there.
Tensor masked_fill(const Tensor& a, const std::vector<uint8_t>& mask,
                   double value);
// Normalizes the last axis to zero mean / unit variance, then scales+shifts.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// Mean over rows of -log softmax(logits)[row, ids[row]].
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int64_t>& ids);
Tensor clamp(const Tensor& a, double lo, double hi);
// Value copy with the tape connection severed.
Tensor detach(const Tensor& a);

// -- verification --------------------------------------------------------

// Compares the analytic gradient of scalar-valued `f` at `x0` against central
// finite differences; returns the max relative error
// |analytic - numeric| / max(1, |analytic|).  Runs `f` twice on identical
// inputs first and raises NonDeterministicFunction if the results differ.
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Shape& shape, const std::vector<double>& x0,
                  double eps = 1e-5);

}  // namespace xlat::nd
