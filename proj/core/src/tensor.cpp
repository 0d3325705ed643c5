#include "xlat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

namespace xlat::nd {

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeMismatch("negative dimension");
    n *= d;
  }
  return n;
}

namespace {

void check_finite_input(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw NonFiniteInput("tensor input contains NaN/Inf");
}

void check_finite_result(const std::vector<double>& v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x))
      throw DomainError(std::string("non-finite result in ") + op);
}

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->on_tape()) continue;
    if (tape != nullptr && tape != t->tape())
      throw DomainError("operands belong to different tapes");
    tape = t->tape();
  }
  return tape;
}

// Accumulates `src` into grads[node], sizing the buffer on first touch.
void add_grad(std::vector<std::vector<double>>& grads, int node, int64_t numel,
              const double* src) {
  auto& g = grads[static_cast<size_t>(node)];
  if (g.empty()) g.assign(static_cast<size_t>(numel), 0.0);
  for (int64_t i = 0; i < numel; ++i) g[static_cast<size_t>(i)] += src[i];
}

std::vector<double>& grad_slot(std::vector<std::vector<double>>& grads,
                               int node, int64_t numel) {
  auto& g = grads[static_cast<size_t>(node)];
  if (g.empty()) g.assign(static_cast<size_t>(numel), 0.0);
  return g;
}

// True when `small` equals the trailing dims of `big`.
bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  size_t off = big.size() - small.size();
  for (size_t i = 0; i < small.size(); ++i)
    if (small[i] != big[off + i]) return false;
  return true;
}

struct AxisSplit {
  int64_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  if (axis < 0 || static_cast<size_t>(axis) >= shape.size())
    throw ShapeMismatch("axis out of range");
  AxisSplit s{1, shape[axis], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor finish_op(OpKind op, const char* name, Shape shape,
                 std::vector<double> values, Tape* tape, std::vector<int> inputs,
                 Tape::BackwardFn fn) {
  check_finite_result(values, name);
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = std::make_shared<const std::vector<double>>(std::move(values));
  if (tape != nullptr) {
    t.tape_ = tape;
    t.node_ = tape->record(op, std::move(inputs),
                           static_cast<int64_t>(t.values_->size()),
                           std::move(fn));
  }
  return t;
}

// -- Tensor --------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (numel_of(shape) != static_cast<int64_t>(values.size()))
    throw ShapeMismatch("value count does not match shape");
  check_finite_input(values);
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = std::make_shared<const std::vector<double>>(std::move(values));
  return t;
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

Tensor Tensor::zeros(Shape shape) {
  int64_t n = numel_of(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values, Tape& tape) {
  if (numel_of(shape) != static_cast<int64_t>(values.size()))
    throw ShapeMismatch("value count does not match shape");
  check_finite_input(values);
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = std::make_shared<const std::vector<double>>(std::move(values));
  t.tape_ = &tape;
  t.node_ = tape.record(OpKind::Leaf, {},
                        static_cast<int64_t>(t.values_->size()), nullptr);
  tape.leaves_.emplace_back(t.node_, static_cast<int64_t>(t.values_->size()));
  return t;
}

int64_t Tensor::numel() const {
  return values_ ? static_cast<int64_t>(values_->size()) : 0;
}

double Tensor::item() const {
  if (!values_ || values_->size() != 1)
    throw NotScalar("item() requires exactly one element");
  return (*values_)[0];
}

// -- Tape ----------------------------------------------------------------

int Tape::record(OpKind op, std::vector<int> inputs, int64_t numel,
                 BackwardFn fn) {
  int id = static_cast<int>(nodes_.size());
  for (int in : inputs)
    if (in >= id) throw DomainError("tape entry out of topological order");
  nodes_.push_back(Node{op, std::move(inputs), numel, std::move(fn)});
  return id;
}

GradMap Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeConsumed("tape already ran backward");
  if (loss.tape() != this || !loss.on_tape())
    throw DomainError("loss does not live on this tape");
  if (loss.numel() != 1) throw NotScalar("backward requires a scalar loss");
  consumed_ = true;

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[static_cast<size_t>(loss.node())] = {1.0};
  for (int i = loss.node(); i >= 0; --i) {
    auto& g = grads[static_cast<size_t>(i)];
    if (g.empty()) continue;
    const Node& node = nodes_[static_cast<size_t>(i)];
    if (node.backward) node.backward(g, grads);
    if (i != loss.node() && node.op != OpKind::Leaf) {
      g.clear();
      g.shrink_to_fit();  // free intermediate gradients as the sweep passes
    }
  }

  GradMap out;
  out.reserve(leaves_.size());
  for (auto [node, numel] : leaves_) {
    auto& g = grads[static_cast<size_t>(node)];
    if (g.empty())
      out.emplace(node, std::vector<double>(static_cast<size_t>(numel), 0.0));
    else
      out.emplace(node, std::move(g));
  }
  return out;
}

// -- elementwise binary ops ----------------------------------------------

namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary_op(BinOp kind, const Tensor& a, const Tensor& b) {
  const char* name = kind == BinOp::Add ? "add" : kind == BinOp::Sub ? "sub" : "mul";
  const OpKind op = kind == BinOp::Add   ? OpKind::Add
                    : kind == BinOp::Sub ? OpKind::Sub
                                         : OpKind::Mul;
  bool a_big;
  if (a.shape() == b.shape()) {
    a_big = true;
  } else if (is_suffix(b.shape(), a.shape())) {
    a_big = true;
  } else if (is_suffix(a.shape(), b.shape())) {
    a_big = false;
  } else {
    throw ShapeMismatch(std::string(name) + ": incompatible shapes");
  }
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  const auto& bv = big.values();
  const auto& sv = small.values();
  const int64_t bn = big.numel();
  const int64_t sn = small.numel();

  std::vector<double> out(static_cast<size_t>(bn));
  if (bn > 0) {
    const int64_t block = sn == 0 ? 1 : sn;
    switch (kind) {
      case BinOp::Add:
        for (int64_t i = 0; i < bn; ++i) out[i] = a_big ? bv[i] + sv[i % block]
                                                        : sv[i % block] + bv[i];
        break;
      case BinOp::Sub:
        for (int64_t i = 0; i < bn; ++i)
          out[i] = a_big ? bv[i] - sv[i % block] : sv[i % block] - bv[i];
        break;
      case BinOp::Mul:
        for (int64_t i = 0; i < bn; ++i) out[i] = bv[i] * sv[i % block];
        break;
    }
  }

  Tape* tape = common_tape({&a, &b});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int big_node = big.node();
    int small_node = small.node();
    auto big_vals = std::make_shared<std::vector<double>>(big.values());
    auto small_vals = std::make_shared<std::vector<double>>(small.values());
    fn = [kind, a_big, big_node, small_node, bn, sn, big_vals, small_vals](
             const std::vector<double>& g,
             std::vector<std::vector<double>>& grads) {
      const int64_t block = sn == 0 ? 1 : sn;
      if (big_node >= 0) {
        auto& gb = grad_slot(grads, big_node, bn);
        for (int64_t i = 0; i < bn; ++i) {
          double d;
          switch (kind) {
            case BinOp::Add: d = g[i]; break;
            case BinOp::Sub: d = a_big ? g[i] : -g[i]; break;
            case BinOp::Mul: d = g[i] * (*small_vals)[i % block]; break;
            default: d = 0.0;
          }
          gb[i] += d;
        }
      }
      if (small_node >= 0 && sn > 0) {
        auto& gs = grad_slot(grads, small_node, sn);
        for (int64_t i = 0; i < bn; ++i) {
          double d;
          switch (kind) {
            case BinOp::Add: d = g[i]; break;
            case BinOp::Sub: d = a_big ? -g[i] : g[i]; break;
            case BinOp::Mul: d = g[i] * (*big_vals)[i]; break;
            default: d = 0.0;
          }
          gs[i % block] += d;
        }
      }
    };
  }
  std::vector<int> inputs;
  if (big.on_tape()) inputs.push_back(big.node());
  if (small.on_tape()) inputs.push_back(small.node());
  return finish_op(op, name, big.shape(), std::move(out), tape,
                   std::move(inputs), std::move(fn));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Mul, a, b); }

// -- matmul / transpose ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ShapeMismatch("matmul expects 2-D operands");
  const int64_t m = a.shape()[0], k = a.shape()[1];
  const int64_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) throw ShapeMismatch("matmul inner dimensions differ");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = av.data() + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double s = arow[p];
      const double* brow = bv.data() + p * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  }

  Tape* tape = common_tape({&a, &b});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int an = a.node(), bn2 = b.node();
    auto avp = std::make_shared<std::vector<double>>(av);
    auto bvp = std::make_shared<std::vector<double>>(bv);
    fn = [m, k, n, an, bn2, avp, bvp](const std::vector<double>& g,
                                      std::vector<std::vector<double>>& grads) {
      if (an >= 0) {
        auto& ga = grad_slot(grads, an, m * k);
        // dA = dC * B^T
        for (int64_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          double* garow = ga.data() + i * k;
          for (int64_t p = 0; p < k; ++p) {
            const double* brow = bvp->data() + p * n;
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            garow[p] += acc;
          }
        }
      }
      if (bn2 >= 0) {
        auto& gb = grad_slot(grads, bn2, k * n);
        // dB = A^T * dC
        for (int64_t i = 0; i < m; ++i) {
          const double* arow = avp->data() + i * k;
          const double* grow = g.data() + i * n;
          for (int64_t p = 0; p < k; ++p) {
            const double s = arow[p];
            double* gbrow = gb.data() + p * n;
            for (int64_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
          }
        }
      }
    };
  }
  std::vector<int> inputs;
  if (a.on_tape()) inputs.push_back(a.node());
  if (b.on_tape()) inputs.push_back(b.node());
  return finish_op(OpKind::Matmul, "matmul", {m, n}, std::move(out), tape,
                   std::move(inputs), std::move(fn));
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) throw ShapeMismatch("transpose expects 2-D");
  const int64_t m = a.shape()[0], n = a.shape()[1];
  const auto& av = a.values();
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];

  Tape* tape = common_tape({&a});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int an = a.node();
    fn = [m, n, an](const std::vector<double>& g,
                    std::vector<std::vector<double>>& grads) {
      auto& ga = grad_slot(grads, an, m * n);
      for (int64_t j = 0; j < n; ++j)
        for (int64_t i = 0; i < m; ++i) ga[i * n + j] += g[j * m + i];
    };
  }
  return finish_op(OpKind::Transpose, "transpose", {n, m}, std::move(out), tape,
                   a.on_tape() ? std::vector<int>{a.node()} : std::vector<int>{},
                   std::move(fn));
}

// -- unary elementwise -----------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(OpKind op, const char* name, const Tensor& a, Fwd fwd, Bwd bwd) {
  const auto& av = a.values();
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i]);

  Tape* tape = common_tape({&a});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int an = a.node();
    auto outp = std::make_shared<std::vector<double>>(out);
    auto avp = std::make_shared<std::vector<double>>(av);
    fn = [an, n, outp, avp, bwd](const std::vector<double>& g,
                                 std::vector<std::vector<double>>& grads) {
      auto& ga = grad_slot(grads, an, n);
      for (int64_t i = 0; i < n; ++i)
        ga[i] += g[i] * bwd((*avp)[i], (*outp)[i]);
    };
  }
  return finish_op(op, name, a.shape(), std::move(out), tape,
                   a.on_tape() ? std::vector<int>{a.node()} : std::vector<int>{},
                   std::move(fn));
}

}  // namespace

Tensor exp(const Tensor& a) {
  return unary_op(
      OpKind::Exp, "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double x : a.values())
    if (x <= 0.0) throw DomainError("log of non-positive value");
  return unary_op(
      OpKind::Log, "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      OpKind::Tanh, "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      OpKind::Sigmoid, "sigmoid", a,
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw DomainError("clamp requires lo <= hi");
  return unary_op(
      OpKind::Clamp, "clamp", a,
      [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// -- softmax family ----------------------------------------------------------

namespace {

enum class SoftKind { Softmax, LogSoftmax };

Tensor softmax_impl(SoftKind kind, const Tensor& a, int axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (s.n == 0) throw ShapeMismatch("softmax over empty axis");
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t in = 0; in < s.inner; ++in) {
      const int64_t base = o * s.n * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < s.n; ++j)
        mx = std::max(mx, av[base + j * s.inner]);
      double z = 0.0;
      for (int64_t j = 0; j < s.n; ++j)
        z += std::exp(av[base + j * s.inner] - mx);
      if (kind == SoftKind::Softmax) {
        for (int64_t j = 0; j < s.n; ++j)
          out[base + j * s.inner] = std::exp(av[base + j * s.inner] - mx) / z;
      } else {
        const double lz = mx + std::log(z);
        for (int64_t j = 0; j < s.n; ++j)
          out[base + j * s.inner] = av[base + j * s.inner] - lz;
      }
    }
  }

  Tape* tape = common_tape({&a});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int an = a.node();
    int64_t n = a.numel();
    auto outp = std::make_shared<std::vector<double>>(out);
    fn = [kind, s, an, n, outp](const std::vector<double>& g,
                                std::vector<std::vector<double>>& grads) {
      auto& ga = grad_slot(grads, an, n);
      const auto& y = *outp;
      for (int64_t o = 0; o < s.outer; ++o) {
        for (int64_t in = 0; in < s.inner; ++in) {
          const int64_t base = o * s.n * s.inner + in;
          double dot = 0.0;
          if (kind == SoftKind::Softmax) {
            for (int64_t j = 0; j < s.n; ++j) {
              const int64_t idx = base + j * s.inner;
              dot += g[idx] * y[idx];
            }
            for (int64_t j = 0; j < s.n; ++j) {
              const int64_t idx = base + j * s.inner;
              ga[idx] += y[idx] * (g[idx] - dot);
            }
          } else {
            for (int64_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner];
            for (int64_t j = 0; j < s.n; ++j) {
              const int64_t idx = base + j * s.inner;
              ga[idx] += g[idx] - std::exp(y[idx]) * dot;
            }
          }
        }
      }
    };
  }
  return finish_op(kind == SoftKind::Softmax ? OpKind::Softmax
                                             : OpKind::LogSoftmax,
                   kind == SoftKind::Softmax ? "softmax" : "log_softmax",
                   a.shape(), std::move(out), tape,
                   a.on_tape() ? std::vector<int>{a.node()} : std::vector<int>{},
                   std::move(fn));
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  return softmax_impl(SoftKind::Softmax, a, axis);
}

Tensor log_softmax(const Tensor& a, int axis) {
  return softmax_impl(SoftKind::LogSoftmax, a, axis);
}

// -- reductions --------------------------------------------------------------

namespace {

Tensor reduce_all(OpKind op, const char* name, const Tensor& a, bool take_mean) {
  const auto& av = a.values();
  const int64_t n = a.numel();
  if (take_mean && n == 0) throw ShapeMismatch("mean of empty tensor");
  double acc = 0.0;
  for (double x : av) acc += x;
  const double denom = take_mean ? static_cast<double>(n) : 1.0;
  std::vector<double> out{acc / denom};

  Tape* tape = common_tape({&a});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int an = a.node();
    fn = [an, n, denom](const std::vector<double>& g,
                        std::vector<std::vector<double>>& grads) {
      auto& ga = grad_slot(grads, an, n);
      const double d = g[0] / denom;
      for (int64_t i = 0; i < n; ++i) ga[i] += d;
    };
  }
  return finish_op(op, name, {}, std::move(out), tape,
                   a.on_tape() ? std::vector<int>{a.node()} : std::vector<int>{},
                   std::move(fn));
}

Tensor reduce_axis(OpKind op, const char* name, const Tensor& a, int axis,
                   bool take_mean) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (take_mean && s.n == 0) throw ShapeMismatch("mean over empty axis");
  const auto& av = a.values();
  Shape out_shape;
  for (size_t i = 0; i < a.shape().size(); ++i)
    if (static_cast<int>(i) != axis) out_shape.push_back(a.shape()[i]);
  std::vector<double> out(static_cast<size_t>(s.outer * s.inner), 0.0);
  const double denom = take_mean ? static_cast<double>(s.n) : 1.0;
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t j = 0; j < s.n; ++j)
      for (int64_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += av[(o * s.n + j) * s.inner + in];
  if (take_mean)
    for (auto& x : out) x /= denom;

  Tape* tape = common_tape({&a});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int an = a.node();
    int64_t n = a.numel();
    fn = [s, an, n, denom](const std::vector<double>& g,
                           std::vector<std::vector<double>>& grads) {
      auto& ga = grad_slot(grads, an, n);
      for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t j = 0; j < s.n; ++j)
          for (int64_t in = 0; in < s.inner; ++in)
            ga[(o * s.n + j) * s.inner + in] += g[o * s.inner + in] / denom;
    };
  }
  return finish_op(op, name, std::move(out_shape), std::move(out), tape,
                   a.on_tape() ? std::vector<int>{a.node()} : std::vector<int>{},
                   std::move(fn));
}

}  // namespace

Tensor sum(const Tensor& a) { return reduce_all(OpKind::Sum, "sum", a, false); }
Tensor sum(const Tensor& a, int axis) {
  return reduce_axis(OpKind::Sum, "sum", a, axis, false);
}
Tensor mean(const Tensor& a) { return reduce_all(OpKind::Mean, "mean", a, true); }
Tensor mean(const Tensor& a, int axis) {
  return reduce_axis(OpKind::Mean, "mean", a, axis, true);
}

// -- shape ops ----------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  const size_t rank = parts[0].shape().size();
  if (axis < 0 || static_cast<size_t>(axis) >= rank)
    throw ShapeMismatch("concat axis out of range");
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != rank) throw ShapeMismatch("concat rank mismatch");
    for (size_t i = 0; i < rank; ++i)
      if (static_cast<int>(i) != axis && p.shape()[i] != out_shape[i])
        throw ShapeMismatch("concat non-axis dims differ");
    axis_total += p.shape()[axis];
  }
  out_shape[axis] = axis_total;

  AxisSplit so = split_axis(out_shape, axis);
  std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));
  std::vector<int64_t> offsets;  // axis offset per part
  {
    int64_t off = 0;
    for (const Tensor& p : parts) {
      offsets.push_back(off);
      const int64_t pn = p.shape()[axis];
      const auto& pv = p.values();
      for (int64_t o = 0; o < so.outer; ++o)
        for (int64_t j = 0; j < pn; ++j)
          std::memcpy(out.data() + ((o * so.n + off + j) * so.inner),
                      pv.data() + ((o * pn + j) * so.inner),
                      static_cast<size_t>(so.inner) * sizeof(double));
      off += pn;
    }
  }

  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  Tape* tape = nullptr;
  for (const Tensor* p : ptrs) {
    if (!p->on_tape()) continue;
    if (tape && tape != p->tape())
      throw DomainError("operands belong to different tapes");
    tape = p->tape();
  }

  Tape::BackwardFn fn;
  std::vector<int> inputs;
  if (tape != nullptr) {
    struct PartInfo {
      int node;
      int64_t axis_len, offset, numel;
    };
    std::vector<PartInfo> infos;
    for (size_t i = 0; i < parts.size(); ++i) {
      infos.push_back(PartInfo{parts[i].node(), parts[i].shape()[axis],
                               offsets[i], parts[i].numel()});
      if (parts[i].on_tape()) inputs.push_back(parts[i].node());
    }
    fn = [so, infos](const std::vector<double>& g,
                     std::vector<std::vector<double>>& grads) {
      for (const auto& info : infos) {
        if (info.node < 0) continue;
        auto& gp = grad_slot(grads, info.node, info.numel);
        for (int64_t o = 0; o < so.outer; ++o)
          for (int64_t j = 0; j < info.axis_len; ++j)
            for (int64_t in = 0; in < so.inner; ++in)
              gp[(o * info.axis_len + j) * so.inner + in] +=
                  g[(o * so.n + info.offset + j) * so.inner + in];
      }
    };
  }
  return finish_op(OpKind::Concat, "concat", out_shape, std::move(out), tape,
                   std::move(inputs), std::move(fn));
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (start < 0 || len < 0 || start + len > s.n)
    throw ShapeMismatch("slice range out of bounds");
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  const auto& av = a.values();
  std::vector<double> out(static_cast<size_t>(s.outer * len * s.inner));
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t j = 0; j < len; ++j)
      std::memcpy(out.data() + (o * len + j) * s.inner,
                  av.data() + (o * s.n + start + j) * s.inner,
                  static_cast<size_t>(s.inner) * sizeof(double));

  Tape* tape = common_tape({&a});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int an = a.node();
    int64_t n = a.numel();
    fn = [s, an, n, start, len](const std::vector<double>& g,
                                std::vector<std::vector<double>>& grads) {
      auto& ga = grad_slot(grads, an, n);
      for (int64_t o = 0; o < s.outer; ++o)
        for (int64_t j = 0; j < len; ++j)
          for (int64_t in = 0; in < s.inner; ++in)
            ga[(o * s.n + start + j) * s.inner + in] +=
                g[(o * len + j) * s.inner + in];
    };
  }
  return finish_op(OpKind::Slice, "slice", std::move(out_shape), std::move(out),
                   tape,
                   a.on_tape() ? std::vector<int>{a.node()} : std::vector<int>{},
                   std::move(fn));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw ShapeMismatch("reshape changes element count");
  Tape* tape = common_tape({&a});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int an = a.node();
    int64_t n = a.numel();
    fn = [an, n](const std::vector<double>& g,
                 std::vector<std::vector<double>>& grads) {
      add_grad(grads, an, n, g.data());
    };
  }
  return finish_op(OpKind::Reshape, "reshape", std::move(shape), a.values(),
                   tape,
                   a.on_tape() ? std::vector<int>{a.node()} : std::vector<int>{},
                   std::move(fn));
}

Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids) {
  if (table.shape().size() != 2) throw ShapeMismatch("embedding table must be 2-D");
  const int64_t v = table.shape()[0], d = table.shape()[1];
  for (int64_t id : ids)
    if (id < 0 || id >= v) throw DomainError("embedding id out of range");
  const auto& tv = table.values();
  const int64_t n = static_cast<int64_t>(ids.size());
  std::vector<double> out(static_cast<size_t>(n * d));
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * d, tv.data() + ids[i] * d,
                static_cast<size_t>(d) * sizeof(double));

  Tape* tape = common_tape({&table});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int tn = table.node();
    auto ids_copy = std::make_shared<std::vector<int64_t>>(ids);
    int64_t tnumel = table.numel();
    fn = [tn, d, tnumel, ids_copy](const std::vector<double>& g,
                                   std::vector<std::vector<double>>& grads) {
      auto& gt = grad_slot(grads, tn, tnumel);
      const auto& idv = *ids_copy;
      for (size_t i = 0; i < idv.size(); ++i)
        for (int64_t j = 0; j < d; ++j)
          gt[idv[i] * d + j] += g[static_cast<int64_t>(i) * d + j];
    };
  }
  return finish_op(OpKind::Embedding, "embedding", {n, d}, std::move(out), tape,
                   table.on_tape() ? std::vector<int>{table.node()}
                                   : std::vector<int>{},
                   std::move(fn));
}

Tensor masked_fill(const Tensor& a, const std::vector<uint8_t>& mask,
                   double value) {
  if (static_cast<int64_t>(mask.size()) != a.numel())
    throw ShapeMismatch("mask size differs from tensor size");
  if (!std::isfinite(value)) throw NonFiniteInput("fill value must be finite");
  const auto& av = a.values();
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = mask[i] ? value : av[i];

  Tape* tape = common_tape({&a});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int an = a.node();
    auto mask_copy = std::make_shared<std::vector<uint8_t>>(mask);
    fn = [an, n, mask_copy](const std::vector<double>& g,
                            std::vector<std::vector<double>>& grads) {
      auto& ga = grad_slot(grads, an, n);
      for (int64_t i = 0; i < n; ++i)
        if (!(*mask_copy)[i]) ga[i] += g[i];
    };
  }
  return finish_op(OpKind::MaskedFill, "masked_fill", a.shape(), std::move(out),
                   tape,
                   a.on_tape() ? std::vector<int>{a.node()} : std::vector<int>{},
                   std::move(fn));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.shape().empty()) throw ShapeMismatch("layer_norm needs rank >= 1");
  const int64_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw ShapeMismatch("layer_norm gain/bias must have shape [d]");
  if (d == 0) throw ShapeMismatch("layer_norm over empty axis");
  const int64_t rows = x.numel() / d;
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (int64_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * rs;
      xhat[r * d + j] = xh;
      out[r * d + j] = xh * gv[j] + bv[j];
    }
  }

  Tape* tape = common_tape({&x, &gain, &bias});
  Tape::BackwardFn fn;
  std::vector<int> inputs;
  if (tape != nullptr) {
    int xn = x.node(), gn = gain.node(), bn = bias.node();
    auto xhatp = std::make_shared<std::vector<double>>(std::move(xhat));
    auto rstdp = std::make_shared<std::vector<double>>(std::move(rstd));
    auto gvp = std::make_shared<std::vector<double>>(gv);
    fn = [xn, gn, bn, rows, d, xhatp, rstdp, gvp](
             const std::vector<double>& g,
             std::vector<std::vector<double>>& grads) {
      const auto& xh = *xhatp;
      if (xn >= 0) {
        auto& gx = grad_slot(grads, xn, rows * d);
        for (int64_t r = 0; r < rows; ++r) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double dxh = g[r * d + j] * (*gvp)[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[r * d + j];
          }
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          const double rs = (*rstdp)[r];
          for (int64_t j = 0; j < d; ++j) {
            const double dxh = g[r * d + j] * (*gvp)[j];
            gx[r * d + j] +=
                rs * (dxh - mean_dxhat - xh[r * d + j] * mean_dxhat_xhat);
          }
        }
      }
      if (gn >= 0) {
        auto& gg = grad_slot(grads, gn, d);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xh[r * d + j];
      }
      if (bn >= 0) {
        auto& gb = grad_slot(grads, bn, d);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
    };
    if (x.on_tape()) inputs.push_back(x.node());
    if (gain.on_tape()) inputs.push_back(gain.node());
    if (bias.on_tape()) inputs.push_back(bias.node());
  }
  return finish_op(OpKind::LayerNorm, "layer_norm", x.shape(), std::move(out),
                   tape, std::move(inputs), std::move(fn));
}

Tensor cross_entropy_rows(const Tensor& logits,
                          const std::vector<int64_t>& ids) {
  if (logits.shape().size() != 2)
    throw ShapeMismatch("cross_entropy_rows expects 2-D logits");
  const int64_t t = logits.shape()[0], v = logits.shape()[1];
  if (static_cast<int64_t>(ids.size()) != t)
    throw ShapeMismatch("one target id per logits row required");
  if (t == 0) throw ShapeMismatch("cross_entropy_rows over zero rows");
  for (int64_t id : ids)
    if (id < 0 || id >= v) throw DomainError("target id out of range");
  const auto& lv = logits.values();
  std::vector<double> lse(static_cast<size_t>(t));
  double total = 0.0;
  for (int64_t r = 0; r < t; ++r) {
    const double* row = lv.data() + r * v;
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    lse[r] = mx + std::log(z);
    total += lse[r] - row[ids[r]];
  }
  std::vector<double> out{total / static_cast<double>(t)};

  Tape* tape = common_tape({&logits});
  Tape::BackwardFn fn;
  if (tape != nullptr) {
    int ln = logits.node();
    auto lvp = std::make_shared<std::vector<double>>(lv);
    auto lsep = std::make_shared<std::vector<double>>(std::move(lse));
    auto idsp = std::make_shared<std::vector<int64_t>>(ids);
    fn = [ln, t, v, lvp, lsep, idsp](const std::vector<double>& g,
                                     std::vector<std::vector<double>>& grads) {
      auto& gl = grad_slot(grads, ln, t * v);
      const double scale = g[0] / static_cast<double>(t);
      for (int64_t r = 0; r < t; ++r) {
        const double* row = lvp->data() + r * v;
        const double l = (*lsep)[r];
        for (int64_t j = 0; j < v; ++j)
          gl[r * v + j] += scale * std::exp(row[j] - l);
        gl[r * v + (*idsp)[r]] -= scale;
      }
    };
  }
  return finish_op(OpKind::CrossEntropyRows, "cross_entropy_rows", {},
                   std::move(out), tape,
                   logits.on_tape() ? std::vector<int>{logits.node()}
                                    : std::vector<int>{},
                   std::move(fn));
}

Tensor detach(const Tensor& a) {
  return Tensor::constant(a.shape(), a.values());
}

// -- gradient checking ---------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Shape& shape, const std::vector<double>& x0,
                  double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw ConfigError("grad_check epsilon must lie in [1e-7, 1e-3]");
  if (numel_of(shape) != static_cast<int64_t>(x0.size()))
    throw ShapeMismatch("x0 does not match shape");

  auto eval = [&](const std::vector<double>& xv) {
    Tape tape;
    Tensor x = Tensor::leaf(shape, xv, tape);
    Tensor y = f(x);
    if (y.numel() != 1) throw NotScalar("grad_check objective must be scalar");
    return y.values()[0];
  };

  Tape tape;
  Tensor x = Tensor::leaf(shape, x0, tape);
  Tensor y = f(x);
  if (y.numel() != 1) throw NotScalar("grad_check objective must be scalar");
  const double y0 = y.values()[0];
  GradMap gm = tape.backward(y);
  const std::vector<double>& g = gm.at(x.node());

  const double y1 = eval(x0);
  if (std::memcmp(&y0, &y1, sizeof(double)) != 0)
    throw NonDeterministicFunction("objective is not reproducible");

  double max_rel = 0.0;
  std::vector<double> xv = x0;
  for (size_t i = 0; i < x0.size(); ++i) {
    xv[i] = x0[i] + eps;
    const double fp = eval(xv);
    xv[i] = x0[i] - eps;
    const double fm = eval(xv);
    xv[i] = x0[i];
    const double numeric = (fp - fm) / (2.0 * eps);
    const double rel = std::abs(g[i] - numeric) / std::max(1.0, std::abs(g[i]));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace xlat::nd
