#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slm/common.hpp"

// Reverse-mode automatic differentiation over dense row-major double tensors.
// A Tape records one step's computation; backward() may run once per tape.
// Tensors are plain values; a tensor is "attached" when it carries the handle
// of the tape node that produced it. Ops on detached tensors compute values
// only, which is what evaluation-mode forwards use.

namespace slm {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class Tape;

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto e : shape_) {
      if (e <= 0) throw ContractViolation("Tensor: extents must be positive, got " + shape_str(shape_));
    }
    if (numel_of(shape_) != static_cast<std::int64_t>(data_.size())) {
      throw ContractViolation("Tensor: shape " + shape_str(shape_) + " does not match buffer of " +
                              std::to_string(data_.size()));
    }
  }

  static Tensor zeros(Shape shape) {
    auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }

  static Tensor full(Shape shape, double v) {
    auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool is_scalar() const { return numel() == 1; }

  // matrix accessors; a rank-1 tensor counts as a single row
  std::int64_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::int64_t cols() const {
    return shape_.size() >= 2 ? shape_[1] : (shape_.empty() ? 0 : shape_[0]);
  }

  double value() const {
    if (!is_scalar()) throw ContractViolation("Tensor::value: tensor is not scalar");
    return data_[0];
  }

  double at(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  std::span<const double> data() const { return data_; }
  std::vector<double>& raw() { return data_; }

  bool attached() const { return tape_ != nullptr; }
  int node() const { return node_; }
  Tape* tape() const { return tape_; }

  Tensor detached() const {
    Tensor t(shape_, data_);
    return t;
  }

 private:
  friend class Tape;
  friend Tensor make_attached(Tape* tape, int node, Shape shape, std::vector<double> data);

  Shape shape_;
  std::vector<double> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

enum class Op : std::uint8_t {
  leaf,
  matmul,
  add,
  sub,
  mul,
  scale,
  relu,
  exp,
  log,
  log_softmax,
  sigmoid,
  mean,
  sum,
  concat_rows,
  slice_rows,
  square,
  grl,
  hausdorff,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::relu: return "relu";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::log_softmax: return "log_softmax";
    case Op::sigmoid: return "sigmoid";
    case Op::mean: return "mean";
    case Op::sum: return "sum";
    case Op::concat_rows: return "concat_rows";
    case Op::slice_rows: return "slice_rows";
    case Op::square: return "square";
    case Op::grl: return "grl";
    case Op::hausdorff: return "hausdorff";
  }
  return "?";
}

constexpr double kLogClamp = 1e-12;

struct Node {
  Op op = Op::leaf;
  std::vector<int> inputs;           // -1 marks a constant (detached) operand
  std::vector<Shape> input_shapes;
  Shape out_shape;
  std::vector<std::vector<double>> saved;  // op-specific forward values
  std::vector<std::int64_t> aux;           // op-specific integers
  double attr = 0.0;                       // scale constant / grl lambda
  bool flag = false;                       // matmul: rhs transposed; add: row bias
};

// Gradients of one backward pass, indexed by tape node handle. Nodes that the
// root never reached read back as zero tensors of the node's shape.
class GradMap {
 public:
  GradMap(std::vector<std::vector<double>> grads, std::vector<Shape> shapes, const Tape* tape)
      : grads_(std::move(grads)), shapes_(std::move(shapes)), tape_(tape) {}

  Tensor grad(int node) const {
    if (node < 0 || node >= static_cast<int>(grads_.size())) {
      throw ContractViolation("GradMap::grad: node handle out of range");
    }
    const auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) return Tensor::zeros(shapes_[static_cast<std::size_t>(node)]);
    return Tensor(shapes_[static_cast<std::size_t>(node)], g);
  }

  Tensor grad(const Tensor& t) const {
    if (!t.attached()) throw ContractViolation("GradMap::grad: tensor is not tape-attached");
    if (reinterpret_cast<const void*>(t.tape()) != reinterpret_cast<const void*>(tape_)) {
      throw ContractViolation("GradMap::grad: tensor belongs to a different tape");
    }
    return grad(t.node());
  }

 private:
  std::vector<std::vector<double>> grads_;
  std::vector<Shape> shapes_;
  const Tape* tape_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Attach a copy of `value` as a differentiable leaf.
  Tensor leaf(const Tensor& value);

  int size() const { return static_cast<int>(nodes_.size()); }
  bool consumed() const { return consumed_; }
  const Node& node_at(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

  int push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  GradMap backward(const Tensor& root);

  // True when any node in `targets` is reachable from any root by following
  // node inputs backwards. Used to audit gradient isolation between losses.
  bool reaches(std::span<const int> roots, std::span<const int> targets) const {
    std::vector<std::uint8_t> want(nodes_.size(), 0);
    for (int t : targets) {
      if (t >= 0 && t < size()) want[static_cast<std::size_t>(t)] = 1;
    }
    std::vector<std::uint8_t> seen(nodes_.size(), 0);
    std::vector<int> stack;
    for (int r : roots) {
      if (r >= 0 && r < size() && !seen[static_cast<std::size_t>(r)]) {
        seen[static_cast<std::size_t>(r)] = 1;
        stack.push_back(r);
      }
    }
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      if (want[static_cast<std::size_t>(id)]) return true;
      for (int in : nodes_[static_cast<std::size_t>(id)].inputs) {
        if (in >= 0 && !seen[static_cast<std::size_t>(in)]) {
          seen[static_cast<std::size_t>(in)] = 1;
          stack.push_back(in);
        }
      }
    }
    return false;
  }

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

inline Tensor make_attached(Tape* tape, int node, Shape shape, std::vector<double> data) {
  Tensor t(std::move(shape), std::move(data));
  t.tape_ = tape;
  t.node_ = node;
  return t;
}

inline Tensor Tape::leaf(const Tensor& value) {
  Node n;
  n.op = Op::leaf;
  n.out_shape = value.shape();
  const int id = push(std::move(n));
  return make_attached(this, id, value.shape(), std::vector<double>(value.data().begin(), value.data().end()));
}

namespace detail {

inline void check_finite(const char* op, std::span<const double> v) {
  for (double d : v) {
    if (!std::isfinite(d)) {
      throw NumericFault(std::string("non-finite output from primitive '") + op + "'");
    }
  }
}

inline Tape* common_tape(std::initializer_list<const Tensor*> ins) {
  Tape* tape = nullptr;
  for (const Tensor* t : ins) {
    if (!t->attached()) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      throw ContractViolation("operands attached to different tapes");
    }
  }
  return tape;
}

inline int handle(const Tensor& t) { return t.attached() ? t.node() : -1; }

inline std::vector<double> copy_of(const Tensor& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// primitives

inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b = false) {
  if (a.shape().size() != 2 || b.shape().size() != 2) {
    throw ContractViolation("matmul: operands must be rank-2, got " + shape_str(a.shape()) + " and " +
                            shape_str(b.shape()));
  }
  const std::int64_t m = a.shape()[0];
  const std::int64_t k = a.shape()[1];
  const std::int64_t bk = trans_b ? b.shape()[1] : b.shape()[0];
  const std::int64_t n = trans_b ? b.shape()[0] : b.shape()[1];
  if (bk != k) {
    throw ContractViolation("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()) + (trans_b ? " (rhs transposed)" : ""));
  }
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  const auto* pa = a.data().data();
  const auto* pb = b.data().data();
  if (!trans_b) {
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        if (av == 0.0) continue;
        const double* brow = pb + p * n;
        double* orow = out.data() + i * n;
        for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else {
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        const double* arow = pa + i * k;
        const double* brow = pb + j * k;
        double acc = 0.0;
        for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        out[static_cast<std::size_t>(i * n + j)] = acc;
      }
    }
  }
  detail::check_finite("matmul", out);
  Tape* tape = detail::common_tape({&a, &b});
  if (!tape) return Tensor({m, n}, std::move(out));
  Node node;
  node.op = Op::matmul;
  node.inputs = {detail::handle(a), detail::handle(b)};
  node.input_shapes = {a.shape(), b.shape()};
  node.out_shape = {m, n};
  node.flag = trans_b;
  node.saved = {detail::copy_of(a), detail::copy_of(b)};
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, {m, n}, std::move(out));
}

// add of same-shape tensors, or broadcast of a bias row over every row of `a`
inline Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool bias = !same && a.shape().size() == 2 &&
                    ((b.shape().size() == 1 && b.shape()[0] == a.shape()[1]) ||
                     (b.shape().size() == 2 && b.shape()[0] == 1 && b.shape()[1] == a.shape()[1]));
  if (!same && !bias) {
    throw ContractViolation("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                            " neither match nor row-broadcast");
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  } else {
    const std::int64_t rows = a.shape()[0];
    const std::int64_t cols = a.shape()[1];
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t c = 0; c < cols; ++c) out[static_cast<std::size_t>(r * cols + c)] += b.data()[static_cast<std::size_t>(c)];
    }
  }
  detail::check_finite("add", out);
  Tape* tape = detail::common_tape({&a, &b});
  if (!tape) return Tensor(a.shape(), std::move(out));
  Node node;
  node.op = Op::add;
  node.inputs = {detail::handle(a), detail::handle(b)};
  node.input_shapes = {a.shape(), b.shape()};
  node.out_shape = a.shape();
  node.flag = bias;
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, a.shape(), std::move(out));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ContractViolation("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
  detail::check_finite("sub", out);
  Tape* tape = detail::common_tape({&a, &b});
  if (!tape) return Tensor(a.shape(), std::move(out));
  Node node;
  node.op = Op::sub;
  node.inputs = {detail::handle(a), detail::handle(b)};
  node.input_shapes = {a.shape(), b.shape()};
  node.out_shape = a.shape();
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, a.shape(), std::move(out));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ContractViolation("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  detail::check_finite("mul", out);
  Tape* tape = detail::common_tape({&a, &b});
  if (!tape) return Tensor(a.shape(), std::move(out));
  Node node;
  node.op = Op::mul;
  node.inputs = {detail::handle(a), detail::handle(b)};
  node.input_shapes = {a.shape(), b.shape()};
  node.out_shape = a.shape();
  node.saved = {detail::copy_of(a), detail::copy_of(b)};
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, a.shape(), std::move(out));
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= c;
  detail::check_finite("scale", out);
  Tape* tape = detail::common_tape({&a});
  if (!tape) return Tensor(a.shape(), std::move(out));
  Node node;
  node.op = Op::scale;
  node.inputs = {a.node()};
  node.input_shapes = {a.shape()};
  node.out_shape = a.shape();
  node.attr = c;
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, a.shape(), std::move(out));
}

namespace detail {

template <class Fwd>
Tensor unary(const Tensor& a, Op op, Fwd&& fwd, bool save_input, bool save_output) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = fwd(v);
  check_finite(op_name(op), out);
  Tape* tape = common_tape({&a});
  if (!tape) return Tensor(a.shape(), std::move(out));
  Node node;
  node.op = op;
  node.inputs = {a.node()};
  node.input_shapes = {a.shape()};
  node.out_shape = a.shape();
  if (save_input) node.saved.push_back(copy_of(a));
  if (save_output) node.saved.push_back(out);
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, a.shape(), std::move(out));
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
  return detail::unary(a, Op::relu, [](double v) { return v > 0.0 ? v : 0.0; }, true, false);
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, Op::exp, [](double v) { return std::exp(v); }, false, true);
}

// natural log with the argument clamped below at 1e-12
inline Tensor log(const Tensor& a) {
  return detail::unary(a, Op::log, [](double v) { return std::log(std::max(v, kLogClamp)); }, true, false);
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a, Op::sigmoid,
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }, false,
      true);
}

inline Tensor square(const Tensor& a) {
  return detail::unary(a, Op::square, [](double v) { return v * v; }, true, false);
}

// log softmax along the last axis, rows handled independently
inline Tensor log_softmax(const Tensor& a) {
  if (a.shape().empty() || a.shape().size() > 2) {
    throw ContractViolation("log_softmax: expects rank-1 or rank-2 input, got " + shape_str(a.shape()));
  }
  const std::int64_t rows = a.rows();
  const std::int64_t cols = a.cols();
  std::vector<double> out(a.data().begin(), a.data().end());
  std::vector<double> soft(out.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const double lz = std::log(z) + mx;
    for (std::int64_t c = 0; c < cols; ++c) {
      row[c] -= lz;
      soft[static_cast<std::size_t>(r * cols + c)] = std::exp(row[c]);
    }
  }
  detail::check_finite("log_softmax", out);
  Tape* tape = detail::common_tape({&a});
  if (!tape) return Tensor(a.shape(), std::move(out));
  Node node;
  node.op = Op::log_softmax;
  node.inputs = {a.node()};
  node.input_shapes = {a.shape()};
  node.out_shape = a.shape();
  node.saved = {std::move(soft)};
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, a.shape(), std::move(out));
}

inline Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  acc /= static_cast<double>(a.numel());
  std::vector<double> out{acc};
  detail::check_finite("mean", out);
  Tape* tape = detail::common_tape({&a});
  if (!tape) return Tensor({1}, std::move(out));
  Node node;
  node.op = Op::mean;
  node.inputs = {a.node()};
  node.input_shapes = {a.shape()};
  node.out_shape = {1};
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, {1}, std::move(out));
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  std::vector<double> out{acc};
  detail::check_finite("sum", out);
  Tape* tape = detail::common_tape({&a});
  if (!tape) return Tensor({1}, std::move(out));
  Node node;
  node.op = Op::sum;
  node.inputs = {a.node()};
  node.input_shapes = {a.shape()};
  node.out_shape = {1};
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, {1}, std::move(out));
}

inline Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractViolation("concat_rows: no operands");
  const std::int64_t cols = parts[0].cols();
  std::int64_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != 2 || p.cols() != cols) {
      throw ContractViolation("concat_rows: operands must be rank-2 with equal widths");
    }
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows * cols));
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  detail::check_finite("concat_rows", out);
  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    Tape* t = detail::common_tape({&p});
    if (t && tape && t != tape) throw ContractViolation("concat_rows: operands attached to different tapes");
    if (t) tape = t;
  }
  if (!tape) return Tensor({rows, cols}, std::move(out));
  Node node;
  node.op = Op::concat_rows;
  node.out_shape = {rows, cols};
  std::int64_t off = 0;
  for (const Tensor& p : parts) {
    node.inputs.push_back(detail::handle(p));
    node.input_shapes.push_back(p.shape());
    node.aux.push_back(off);
    off += p.rows();
  }
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, {rows, cols}, std::move(out));
}

inline Tensor concat_rows(std::initializer_list<Tensor> parts) {
  std::vector<Tensor> v(parts);
  return concat_rows(std::span<const Tensor>(v));
}

// rows [r0, r1)
inline Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1) {
  if (a.shape().size() != 2) throw ContractViolation("slice_rows: expects rank-2 input");
  const std::int64_t rows = a.shape()[0];
  const std::int64_t cols = a.shape()[1];
  if (r0 < 0 || r1 > rows || r0 >= r1) {
    throw ContractViolation("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                            ") invalid for " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin() + r0 * cols, a.data().begin() + r1 * cols);
  Tape* tape = detail::common_tape({&a});
  if (!tape) return Tensor({r1 - r0, cols}, std::move(out));
  Node node;
  node.op = Op::slice_rows;
  node.inputs = {a.node()};
  node.input_shapes = {a.shape()};
  node.out_shape = {r1 - r0, cols};
  node.aux = {r0, r1};
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, {r1 - r0, cols}, std::move(out));
}

// forward identity; backward multiplies the upstream gradient by -lambda
inline Tensor grl(const Tensor& a, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) {
    throw ContractViolation("grl: lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  Tape* tape = detail::common_tape({&a});
  if (!tape) return Tensor(a.shape(), std::move(out));
  Node node;
  node.op = Op::grl;
  node.inputs = {a.node()};
  node.input_shapes = {a.shape()};
  node.out_shape = a.shape();
  node.attr = lambda;
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, a.shape(), std::move(out));
}

// Symmetric average Hausdorff distance between row sets X [n x d] and Y
// [m x d]:
//   0.5 * [ sum_i w_i min_j |x_i - y_j| / sum_i w_i + (1/m) sum_j min_i |x_i - y_j| ]
// The per-row weights on X must all equal one in the forward pass, so the
// value is the plain average Hausdorff distance; they exist so a
// straight-through membership mask can ride the backward. Only the x-side
// average couples to the weights: each row's weight gradient is its
// distance's deviation from the set mean, which rewards membership of rows
// close to Y and penalizes far ones. The y-side nearest-neighbor term is a
// set minimum, carrying feature gradients but no membership gradient.
inline Tensor weighted_hausdorff(const Tensor& x, const Tensor& w, const Tensor& y) {
  if (x.shape().size() != 2 || y.shape().size() != 2 || x.cols() != y.cols()) {
    throw ContractViolation("hausdorff: point sets must be rank-2 with equal width");
  }
  const std::int64_t n = x.rows(), m = y.rows(), d = x.cols();
  if (n == 0 || m == 0) throw ContractViolation("hausdorff: empty set");
  if (w.numel() != n) throw ContractViolation("hausdorff: weight count must match lhs rows");
  std::vector<double> min_x(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> arg_x(static_cast<std::size_t>(n), 0);
  std::vector<double> min_y(static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> arg_y(static_cast<std::size_t>(m), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    const double* xi = x.data().data() + i * d;
    for (std::int64_t j = 0; j < m; ++j) {
      const double* yj = y.data().data() + j * d;
      double s = 0.0;
      for (std::int64_t k = 0; k < d; ++k) {
        const double diff = xi[k] - yj[k];
        s += diff * diff;
      }
      const double dist = std::sqrt(s);
      if (dist < min_x[static_cast<std::size_t>(i)]) {
        min_x[static_cast<std::size_t>(i)] = dist;
        arg_x[static_cast<std::size_t>(i)] = j;
      }
      if (dist < min_y[static_cast<std::size_t>(j)]) {
        min_y[static_cast<std::size_t>(j)] = dist;
        arg_y[static_cast<std::size_t>(j)] = i;
      }
    }
  }
  double sw = 0.0;
  for (std::int64_t i = 0; i < n; ++i) sw += w[i];
  if (!(sw > 0.0)) throw ContractViolation("hausdorff: weights must have positive sum");
  double term1 = 0.0;
  for (std::int64_t i = 0; i < n; ++i) term1 += w[i] * min_x[static_cast<std::size_t>(i)];
  term1 /= sw;
  double term2 = 0.0;
  for (std::int64_t j = 0; j < m; ++j) term2 += min_y[static_cast<std::size_t>(j)];
  term2 /= static_cast<double>(m);
  std::vector<double> out{0.5 * (term1 + term2)};
  detail::check_finite("hausdorff", out);
  Tape* tape = detail::common_tape({&x, &w, &y});
  if (!tape) return Tensor({1}, std::move(out));
  Node node;
  node.op = Op::hausdorff;
  node.inputs = {detail::handle(x), detail::handle(w), detail::handle(y)};
  node.input_shapes = {x.shape(), w.shape(), y.shape()};
  node.out_shape = {1};
  node.saved = {detail::copy_of(x), detail::copy_of(w), detail::copy_of(y), min_x, min_y, {term1, sw}};
  node.aux = arg_x;
  node.aux.insert(node.aux.end(), arg_y.begin(), arg_y.end());
  const int id = tape->push(std::move(node));
  return make_attached(tape, id, {1}, std::move(out));
}

inline double average_hausdorff(const Tensor& x, const Tensor& y) {
  return weighted_hausdorff(x.detached(), Tensor::full({x.rows()}, 1.0), y.detached()).value();
}

// convenience: gather arbitrary rows as concat of unit slices
inline Tensor gather_rows(const Tensor& a, std::span<const int> idx) {
  if (idx.empty()) throw ContractViolation("gather_rows: empty index list");
  std::vector<Tensor> parts;
  parts.reserve(idx.size());
  for (int i : idx) parts.push_back(slice_rows(a, i, i + 1));
  return concat_rows(std::span<const Tensor>(parts));
}

// ---------------------------------------------------------------------------
// backward

inline GradMap Tape::backward(const Tensor& root) {
  if (consumed_) throw ContractViolation("backward: tape already consumed");
  if (!root.attached() || root.tape() != this) {
    throw ContractViolation("backward: root is not attached to this tape");
  }
  if (!root.is_scalar()) throw ContractViolation("backward: root must be scalar");
  consumed_ = true;

  std::vector<std::vector<double>> grads(nodes_.size());
  std::vector<Shape> shapes(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) shapes[i] = nodes_[i].out_shape;

  auto acc = [&](int id) -> std::vector<double>& {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) g.assign(static_cast<std::size_t>(numel_of(shapes[static_cast<std::size_t>(id)])), 0.0);
    return g;
  };

  acc(root.node())[0] = 1.0;

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    const Node& nd = nodes_[static_cast<std::size_t>(id)];
    const auto& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) continue;
    switch (nd.op) {
      case Op::leaf:
        break;
      case Op::matmul: {
        const auto& av = nd.saved[0];
        const auto& bv = nd.saved[1];
        const std::int64_t m = nd.input_shapes[0][0];
        const std::int64_t k = nd.input_shapes[0][1];
        const std::int64_t n = nd.out_shape[1];
        if (nd.inputs[0] >= 0) {
          auto& ga = acc(nd.inputs[0]);
          if (!nd.flag) {  // out = A*B ; gA = G * B^T
            for (std::int64_t i = 0; i < m; ++i)
              for (std::int64_t p = 0; p < k; ++p) {
                double s = 0.0;
                for (std::int64_t j = 0; j < n; ++j) s += g[static_cast<std::size_t>(i * n + j)] * bv[static_cast<std::size_t>(p * n + j)];
                ga[static_cast<std::size_t>(i * k + p)] += s;
              }
          } else {  // out = A*B^T (B is n x k) ; gA = G * B
            for (std::int64_t i = 0; i < m; ++i)
              for (std::int64_t p = 0; p < k; ++p) {
                double s = 0.0;
                for (std::int64_t j = 0; j < n; ++j) s += g[static_cast<std::size_t>(i * n + j)] * bv[static_cast<std::size_t>(j * k + p)];
                ga[static_cast<std::size_t>(i * k + p)] += s;
              }
          }
        }
        if (nd.inputs[1] >= 0) {
          auto& gb = acc(nd.inputs[1]);
          if (!nd.flag) {  // gB = A^T * G  (k x n)
            for (std::int64_t p = 0; p < k; ++p)
              for (std::int64_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::int64_t i = 0; i < m; ++i) s += av[static_cast<std::size_t>(i * k + p)] * g[static_cast<std::size_t>(i * n + j)];
                gb[static_cast<std::size_t>(p * n + j)] += s;
              }
          } else {  // gB = G^T * A  (n x k)
            for (std::int64_t j = 0; j < n; ++j)
              for (std::int64_t p = 0; p < k; ++p) {
                double s = 0.0;
                for (std::int64_t i = 0; i < m; ++i) s += g[static_cast<std::size_t>(i * n + j)] * av[static_cast<std::size_t>(i * k + p)];
                gb[static_cast<std::size_t>(j * k + p)] += s;
              }
          }
        }
        break;
      }
      case Op::add: {
        if (nd.inputs[0] >= 0) {
          auto& ga = acc(nd.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (nd.inputs[1] >= 0) {
          auto& gb = acc(nd.inputs[1]);
          if (!nd.flag) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
          } else {
            const std::int64_t rows = nd.out_shape[0];
            const std::int64_t cols = nd.out_shape[1];
            for (std::int64_t r = 0; r < rows; ++r)
              for (std::int64_t c = 0; c < cols; ++c) gb[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(r * cols + c)];
          }
        }
        break;
      }
      case Op::sub: {
        if (nd.inputs[0] >= 0) {
          auto& ga = acc(nd.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (nd.inputs[1] >= 0) {
          auto& gb = acc(nd.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
        break;
      }
      case Op::mul: {
        const auto& av = nd.saved[0];
        const auto& bv = nd.saved[1];
        if (nd.inputs[0] >= 0) {
          auto& ga = acc(nd.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (nd.inputs[1] >= 0) {
          auto& gb = acc(nd.inputs[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
        break;
      }
      case Op::scale: {
        if (nd.inputs[0] >= 0) {
          auto& ga = acc(nd.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * nd.attr;
        }
        break;
      }
      case Op::relu: {
        // gradient at exactly zero is zero
        if (nd.inputs[0] >= 0) {
          const auto& av = nd.saved[0];
          auto& ga = acc(nd.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += av[i] > 0.0 ? g[i] : 0.0;
        }
        break;
      }
      case Op::exp: {
        if (nd.inputs[0] >= 0) {
          const auto& ov = nd.saved[0];
          auto& ga = acc(nd.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ov[i];
        }
        break;
      }
      case Op::log: {
        if (nd.inputs[0] >= 0) {
          const auto& av = nd.saved[0];
          auto& ga = acc(nd.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += av[i] > kLogClamp ? g[i] / av[i] : 0.0;
        }
        break;
      }
      case Op::log_softmax: {
        if (nd.inputs[0] >= 0) {
          const auto& soft = nd.saved[0];
          auto& ga = acc(nd.inputs[0]);
          const std::int64_t rows = nd.out_shape.size() == 2 ? nd.out_shape[0] : 1;
          const std::int64_t cols = nd.out_shape.size() == 2 ? nd.out_shape[1] : nd.out_shape[0];
          for (std::int64_t r = 0; r < rows; ++r) {
            double gsum = 0.0;
            for (std::int64_t c = 0; c < cols; ++c) gsum += g[static_cast<std::size_t>(r * cols + c)];
            for (std::int64_t c = 0; c < cols; ++c) {
              const std::size_t i = static_cast<std::size_t>(r * cols + c);
              ga[i] += g[i] - soft[i] * gsum;
            }
          }
        }
        break;
      }
      case Op::sigmoid: {
        if (nd.inputs[0] >= 0) {
          const auto& ov = nd.saved[0];
          auto& ga = acc(nd.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ov[i] * (1.0 - ov[i]);
        }
        break;
      }
      case Op::mean: {
        if (nd.inputs[0] >= 0) {
          auto& ga = acc(nd.inputs[0]);
          const double gv = g[0] / static_cast<double>(ga.size());
          for (auto& v : ga) v += gv;
        }
        break;
      }
      case Op::sum: {
        if (nd.inputs[0] >= 0) {
          auto& ga = acc(nd.inputs[0]);
          for (auto& v : ga) v += g[0];
        }
        break;
      }
      case Op::concat_rows: {
        const std::int64_t cols = nd.out_shape[1];
        for (std::size_t k = 0; k < nd.inputs.size(); ++k) {
          if (nd.inputs[k] < 0) continue;
          auto& gi = acc(nd.inputs[k]);
          const std::int64_t off = nd.aux[k] * cols;
          for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[static_cast<std::size_t>(off) + i];
        }
        break;
      }
      case Op::slice_rows: {
        if (nd.inputs[0] >= 0) {
          auto& ga = acc(nd.inputs[0]);
          const std::int64_t cols = nd.out_shape[1];
          const std::int64_t off = nd.aux[0] * cols;
          for (std::size_t i = 0; i < g.size(); ++i) ga[static_cast<std::size_t>(off) + i] += g[i];
        }
        break;
      }
      case Op::square: {
        if (nd.inputs[0] >= 0) {
          const auto& av = nd.saved[0];
          auto& ga = acc(nd.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
        }
        break;
      }
      case Op::grl: {
        if (nd.inputs[0] >= 0) {
          auto& ga = acc(nd.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= nd.attr * g[i];
        }
        break;
      }
      case Op::hausdorff: {
        const auto& xv = nd.saved[0];
        const auto& wv = nd.saved[1];
        const auto& yv = nd.saved[2];
        const auto& min_x = nd.saved[3];
        const auto& min_y = nd.saved[4];
        const double term1 = nd.saved[5][0];
        const double sw = nd.saved[5][1];
        const std::int64_t n = nd.input_shapes[0][0];
        const std::int64_t d = nd.input_shapes[0][1];
        const std::int64_t m = nd.input_shapes[2][0];
        const std::int64_t* arg_x = nd.aux.data();
        const std::int64_t* arg_y = nd.aux.data() + n;
        const double gv = g[0] * 0.5;
        std::vector<double>* gx = nd.inputs[0] >= 0 ? &acc(nd.inputs[0]) : nullptr;
        std::vector<double>* gw = nd.inputs[1] >= 0 ? &acc(nd.inputs[1]) : nullptr;
        std::vector<double>* gy = nd.inputs[2] >= 0 ? &acc(nd.inputs[2]) : nullptr;
        auto unit_into = [&](std::int64_t i, std::int64_t j, double coeff) {
          // coeff * (x_i - y_j)/|x_i - y_j| into gx_i, negated into gy_j
          const double dist = 0.0;  // recomputed below
          (void)dist;
          const double* xi = xv.data() + i * d;
          const double* yj = yv.data() + j * d;
          double s = 0.0;
          for (std::int64_t k = 0; k < d; ++k) {
            const double diff = xi[k] - yj[k];
            s += diff * diff;
          }
          const double dd = std::sqrt(s);
          if (dd == 0.0) return;  // subgradient zero at coincident points
          for (std::int64_t k = 0; k < d; ++k) {
            const double u = (xi[k] - yj[k]) / dd;
            if (gx) (*gx)[static_cast<std::size_t>(i * d + k)] += coeff * u;
            if (gy) (*gy)[static_cast<std::size_t>(j * d + k)] -= coeff * u;
          }
        };
        for (std::int64_t i = 0; i < n; ++i) {
          if (gw) (*gw)[static_cast<std::size_t>(i)] += gv * (min_x[static_cast<std::size_t>(i)] - term1) / sw;
          unit_into(i, arg_x[i], gv * wv[static_cast<std::size_t>(i)] / sw);
        }
        for (std::int64_t j = 0; j < m; ++j) {
          unit_into(arg_y[j], j, gv / static_cast<double>(m));
        }
        break;
      }
    }
  }
  return GradMap(std::move(grads), std::move(shapes), this);
}

// ---------------------------------------------------------------------------
// finite-difference verification

// Max over coordinates of the relative error between the tape gradient of
// f and a central difference, with denominator max(|analytic|, |numeric|, 1e-8).
// f receives a fresh tape and the attached probe point on each call.
inline double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0) || eps > 1e-3) throw ContractViolation("grad_check: eps must lie in (0, 1e-3]");
  Tensor analytic;
  {
    Tape tape;
    Tensor xa = tape.leaf(x);
    Tensor y = f(tape, xa);
    if (!y.is_scalar()) throw ContractViolation("grad_check: f must be scalar-valued");
    if (y.attached()) {
      GradMap gm = tape.backward(y);
      analytic = gm.grad(xa);
    } else {
      analytic = Tensor::zeros(x.shape());  // f never touched the tape
    }
  }
  auto eval = [&](const Tensor& probe) {
    Tape tape;
    Tensor xa = tape.leaf(probe);
    return f(tape, xa).value();
  };
  double max_rel = 0.0;
  std::vector<double> base(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> lo = base, hi = base;
    hi[i] += eps;
    lo[i] -= eps;
    const double fp = eval(Tensor(x.shape(), hi));
    const double fm = eval(Tensor(x.shape(), lo));
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[static_cast<std::int64_t>(i)];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
  }
  return max_rel;
}

}  // namespace slm
