// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fbsnn/errors.hpp"
#include "fbsnn/tensor.hpp"

namespace fbsnn {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

/// Smooth elementwise nonlinearities usable inside the network.
enum class Activation : std::uint8_t { Tanh, Sine };

inline Activation parse_activation(std::string_view tag) {
  if (tag == "tanh") return Activation::Tanh;
  if (tag == "sine" || tag == "sin") return Activation::Sine;
  throw ConfigError("unknown activation '" + std::string(tag) +
                    "' (expected tanh or sine)");
}

inline std::string_view to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "sine";
}

namespace detail {

inline double act_value(Activation a, double x) {
  return a == Activation::Tanh ? std::tanh(x) : std::sin(x);
}
inline double act_first(Activation a, double x) {
  if (a == Activation::Tanh) {
    const double th = std::tanh(x);
    return 1.0 - th * th;
  }
  return std::cos(x);
}
inline double act_second(Activation a, double x) {
  if (a == Activation::Tanh) {
    const double th = std::tanh(x);
    return -2.0 * th * (1.0 - th * th);
  }
  return -std::sin(x);
}

}  // namespace detail

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Hadamard,
  AddRow,
  Scale,
  AddScalar,
  Activate,
  ActivateGrad,
  Log,
  Exp,
  Reciprocal,
  Sum,
  RowSum,
  RepeatRows,
  TileRows,
  ExpandCols,
  Reshape,
  ConcatCols,
  SliceRows,
  BatchedMatVec,
};

class Tape;

/// Handle to an immutable tensor value, optionally tracked on a Tape.
///
/// Untracked values behave as constants. An operation whose inputs are all
/// untracked (or whose tape is paused) produces another untracked value, so
/// the same code path serves both training and inference.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value)
      : value_(std::make_shared<const Tensor>(std::move(value))) {}

  const Tensor& value() const { return *value_; }
  std::shared_ptr<const Tensor> shared_value() const { return value_; }
  std::size_t rows() const { return value_->rows(); }
  std::size_t cols() const { return value_->cols(); }

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node() const { return node_; }

 private:
  friend class Tape;
  Var(std::shared_ptr<const Tensor> v, Tape* tape, NodeId node)
      : value_(std::move(v)), tape_(tape), node_(node) {}

  std::shared_ptr<const Tensor> value_;
  Tape* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

inline Var constant(Tensor t) { return Var(std::move(t)); }

/// Gradients of a scalar with respect to every leaf of a tape.
class Gradients {
 public:
  const Tensor& operator[](const Var& leaf) const { return at(leaf.node()); }
  const Tensor& at(NodeId leaf) const {
    auto it = grads_.find(leaf);
    if (it == grads_.end()) {
      throw ContractError("no gradient recorded for node " +
                          std::to_string(leaf));
    }
    return it->second;
  }
  bool contains(NodeId leaf) const { return grads_.contains(leaf); }
  std::size_t size() const { return grads_.size(); }
  const std::map<NodeId, Tensor>& items() const { return grads_; }

 private:
  friend class Tape;
  std::map<NodeId, Tensor> grads_;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so
/// inputs always precede their consumers and one backward sweep in reverse
/// id order visits each node exactly once. Not thread-safe; use one tape per
/// worker.
class Tape {
 public:
  struct Node {
    Op op = Op::Leaf;
    std::array<NodeId, 2> inputs{kNoNode, kNoNode};
    std::array<std::shared_ptr<const Tensor>, 2> saved;
    std::shared_ptr<const Tensor> output;
    double scalar = 0.0;
    std::size_t aux = 0;
    Activation act = Activation::Sine;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a trainable leaf.
  Var leaf(Tensor value) {
    auto v = std::make_shared<const Tensor>(std::move(value));
    Node n;
    n.op = Op::Leaf;
    n.output = v;
    nodes_.push_back(std::move(n));
    const NodeId id = nodes_.size() - 1;
    leaves_.push_back(id);
    return Var(std::move(v), this, id);
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const std::vector<NodeId>& leaves() const { return leaves_; }

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  /// Reverse sweep from a 1x1 node; returns d(loss)/d(leaf) for every leaf.
  /// Leaves the loss does not depend on receive zero gradients.
  Gradients backward(const Var& loss) const;

  // Appends a node (used by the operation functions below).
  Var record(Op op, Tensor out, const Var* a, const Var* b, double scalar,
             std::size_t aux, Activation act);

 private:
  std::vector<Node> nodes_;
  std::vector<NodeId> leaves_;
  bool recording_ = true;
};

namespace detail {

inline Tape* common_tape(const Var* a, const Var* b) {
  Tape* ta = a != nullptr ? a->tape() : nullptr;
  Tape* tb = b != nullptr ? b->tape() : nullptr;
  if (ta != nullptr && tb != nullptr && ta != tb) {
    throw ContractError("operands are tracked on different tapes");
  }
  return ta != nullptr ? ta : tb;
}

inline Var make(Op op, Tensor out, const Var* a, const Var* b = nullptr,
                double scalar = 0.0, std::size_t aux = 0,
                Activation act = Activation::Sine) {
  Tape* tape = common_tape(a, b);
  if (tape == nullptr || !tape->recording()) return Var(std::move(out));
  return tape->record(op, std::move(out), a, b, scalar, aux, act);
}

inline void require_same_shape(std::string_view op, const Var& a,
                               const Var& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     a.value().shape_string() + " vs " +
                     b.value().shape_string());
  }
}

}  // namespace detail

inline Var Tape::record(Op op, Tensor out, const Var* a, const Var* b,
                        double scalar, std::size_t aux, Activation act) {
  Node n;
  n.op = op;
  n.output = std::make_shared<const Tensor>(std::move(out));
  n.scalar = scalar;
  n.aux = aux;
  n.act = act;
  if (a != nullptr) {
    n.inputs[0] = a->tape() == this ? a->node() : kNoNode;
    n.saved[0] = a->shared_value();
  }
  if (b != nullptr) {
    n.inputs[1] = b->tape() == this ? b->node() : kNoNode;
    n.saved[1] = b->shared_value();
  }
  auto value = n.output;
  nodes_.push_back(std::move(n));
  return Var(std::move(value), this, nodes_.size() - 1);
}

// ---------------------------------------------------------------------------
// Operations

/// Matrix product; requires a.cols == b.rows.
inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + a.value().shape_string() +
                     " x " + b.value().shape_string());
  }
  Tensor out(Matrix(a.value().mat() * b.value().mat()));
  return detail::make(Op::MatMul, std::move(out), &a, &b);
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape("add", a, b);
  return detail::make(Op::Add, Tensor(Matrix(a.value().mat() + b.value().mat())),
                      &a, &b);
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape("sub", a, b);
  return detail::make(Op::Sub, Tensor(Matrix(a.value().mat() - b.value().mat())),
                      &a, &b);
}

inline Var hadamard(const Var& a, const Var& b) {
  detail::require_same_shape("hadamard", a, b);
  return detail::make(
      Op::Hadamard,
      Tensor(Matrix(a.value().mat().cwiseProduct(b.value().mat()))), &a, &b);
}

/// a + 1*bias where bias is a 1 x a.cols row. The only broadcast supported.
inline Var add_row(const Var& a, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_row: bias " + bias.value().shape_string() +
                     " does not match " + a.value().shape_string());
  }
  Matrix out = a.value().mat();
  out.rowwise() += bias.value().mat().row(0);
  return detail::make(Op::AddRow, Tensor(std::move(out)), &a, &bias);
}

inline Var scale(const Var& a, double s) {
  return detail::make(Op::Scale, Tensor(Matrix(a.value().mat() * s)), &a,
                      nullptr, s);
}

inline Var add_scalar(const Var& a, double s) {
  return detail::make(Op::AddScalar,
                      Tensor(Matrix(a.value().mat().array() + s)), &a, nullptr,
                      s);
}

inline Var activate(const Var& a, Activation kind) {
  Matrix out = a.value().mat().unaryExpr(
      [kind](double x) { return detail::act_value(kind, x); });
  return detail::make(Op::Activate, Tensor(std::move(out)), &a, nullptr, 0.0, 0,
                      kind);
}

/// Elementwise act'(a). Differentiable itself (uses act''), which is what
/// lets parameter gradients flow through the spatial Jacobian.
inline Var activate_grad(const Var& a, Activation kind) {
  Matrix out = a.value().mat().unaryExpr(
      [kind](double x) { return detail::act_first(kind, x); });
  return detail::make(Op::ActivateGrad, Tensor(std::move(out)), &a, nullptr,
                      0.0, 0, kind);
}

inline Var map_activation(const Var& a, std::string_view tag) {
  return activate(a, parse_activation(tag));
}

inline Var log(const Var& a) {
  return detail::make(Op::Log, Tensor(Matrix(a.value().mat().array().log())),
                      &a);
}

inline Var exp(const Var& a) {
  return detail::make(Op::Exp, Tensor(Matrix(a.value().mat().array().exp())),
                      &a);
}

inline Var reciprocal(const Var& a) {
  return detail::make(Op::Reciprocal,
                      Tensor(Matrix(a.value().mat().array().inverse())), &a);
}

/// Sum of all entries as a 1x1 tensor.
inline Var sum(const Var& a) {
  return detail::make(Op::Sum, Tensor(1, 1, a.value().mat().sum()), &a);
}

/// Per-row sums, rows x 1.
inline Var row_sum(const Var& a) {
  return detail::make(Op::RowSum,
                      Tensor(Matrix(a.value().mat().rowwise().sum())), &a);
}

/// Each row repeated `times` consecutively: row i lands at i*times..i*times+times-1.
inline Var repeat_rows(const Var& a, std::size_t times) {
  const auto& m = a.value().mat();
  const Eigen::Index k = static_cast<Eigen::Index>(times);
  Matrix out(m.rows() * k, m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out.middleRows(i * k, k).rowwise() = m.row(i);
  }
  return detail::make(Op::RepeatRows, Tensor(std::move(out)), &a, nullptr, 0.0,
                      times);
}

/// The whole matrix stacked `times` times vertically.
inline Var tile_rows(const Var& a, std::size_t times) {
  const auto& m = a.value().mat();
  Matrix out = m.replicate(static_cast<Eigen::Index>(times), 1);
  return detail::make(Op::TileRows, Tensor(std::move(out)), &a, nullptr, 0.0,
                      times);
}

/// Column vector broadcast to `times` identical columns.
inline Var expand_cols(const Var& a, std::size_t times) {
  if (a.cols() != 1) {
    throw ShapeError("expand_cols: expected a column, got " +
                     a.value().shape_string());
  }
  Matrix out = a.value().mat().replicate(1, static_cast<Eigen::Index>(times));
  return detail::make(Op::ExpandCols, Tensor(std::move(out)), &a, nullptr, 0.0,
                      times);
}

/// Reinterprets the row-major data with a new shape of equal size.
inline Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeError("reshape: cannot view " + a.value().shape_string() +
                     " as " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  Tensor out(rows, cols);
  std::copy(a.value().data(), a.value().data() + out.size(), out.data());
  return detail::make(Op::Reshape, std::move(out), &a);
}

inline Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row mismatch " + a.value().shape_string() +
                     " vs " + b.value().shape_string());
  }
  Matrix out(a.value().mat().rows(), a.value().mat().cols() + b.value().mat().cols());
  out << a.value().mat(), b.value().mat();
  return detail::make(Op::ConcatCols, Tensor(std::move(out)), &a, &b);
}

/// Rows [begin, begin+count).
inline Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") exceeds " +
                     a.value().shape_string());
  }
  Matrix out = a.value().mat().middleRows(static_cast<Eigen::Index>(begin),
                                          static_cast<Eigen::Index>(count));
  return detail::make(Op::SliceRows, Tensor(std::move(out)), &a, nullptr, 0.0,
                      begin);
}

/// Per-row matrix-vector product: row m of `mats` holds a d x d matrix in
/// row-major order, row m of `vecs` the vector. Result is M x d.
inline Var batched_matvec(const Var& mats, const Var& vecs) {
  const std::size_t d = vecs.cols();
  if (mats.rows() != vecs.rows() || mats.cols() != d * d) {
    throw ShapeError("batched_matvec: " + mats.value().shape_string() +
                     " incompatible with " + vecs.value().shape_string());
  }
  const auto& a = mats.value();
  const auto& v = vecs.value();
  Tensor out(v.rows(), d);
  for (std::size_t m = 0; m < v.rows(); ++m) {
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += a(m, i * d + j) * v(m, j);
      out(m, i) = acc;
    }
  }
  return detail::make(Op::BatchedMatVec, std::move(out), &mats, &vecs);
}

// ---------------------------------------------------------------------------
// Reverse sweep

namespace detail {

inline void accumulate(std::vector<std::optional<Matrix>>& grads, NodeId id,
                       Matrix contribution) {
  if (id == kNoNode) return;
  auto& slot = grads[id];
  if (slot) {
    *slot += contribution;
  } else {
    slot = std::move(contribution);
  }
}

}  // namespace detail

inline Gradients Tape::backward(const Var& loss) const {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward: loss must be 1x1, got " +
                        loss.value().shape_string());
  }
  Gradients result;
  for (NodeId id : leaves_) {
    const auto& v = *nodes_[id].output;
    result.grads_.emplace(id, Tensor(v.rows(), v.cols()));
  }
  if (loss.tape() != this) {
    if (loss.tracked()) throw ContractError("backward: loss on another tape");
    return result;
  }

  std::vector<std::optional<Matrix>> grads(loss.node() + 1);
  grads[loss.node()] = Matrix::Ones(1, 1);

  using detail::accumulate;
  for (NodeId id = loss.node() + 1; id-- > 0;) {
    if (!grads[id]) continue;
    const Node& n = nodes_[id];
    Matrix g = std::move(*grads[id]);
    grads[id].reset();
    const NodeId ia = n.inputs[0];
    const NodeId ib = n.inputs[1];
    const Matrix* a = n.saved[0] ? &n.saved[0]->mat() : nullptr;
    const Matrix* b = n.saved[1] ? &n.saved[1]->mat() : nullptr;

    switch (n.op) {
      case Op::Leaf:
        result.grads_.at(id).mat() += g;
        break;
      case Op::MatMul:
        if (ia != kNoNode) accumulate(grads, ia, g * b->transpose());
        if (ib != kNoNode) accumulate(grads, ib, a->transpose() * g);
        break;
      case Op::Add:
        if (ia != kNoNode) accumulate(grads, ia, g);
        if (ib != kNoNode) accumulate(grads, ib, std::move(g));
        break;
      case Op::Sub:
        if (ia != kNoNode) accumulate(grads, ia, g);
        if (ib != kNoNode) accumulate(grads, ib, -g);
        break;
      case Op::Hadamard:
        if (ia != kNoNode) accumulate(grads, ia, g.cwiseProduct(*b));
        if (ib != kNoNode) accumulate(grads, ib, g.cwiseProduct(*a));
        break;
      case Op::AddRow:
        if (ib != kNoNode) accumulate(grads, ib, g.colwise().sum());
        if (ia != kNoNode) accumulate(grads, ia, std::move(g));
        break;
      case Op::Scale:
        accumulate(grads, ia, g * n.scalar);
        break;
      case Op::AddScalar:
        accumulate(grads, ia, std::move(g));
        break;
      case Op::Activate: {
        const Activation k = n.act;
        accumulate(grads, ia,
                   g.cwiseProduct(a->unaryExpr(
                       [k](double x) { return detail::act_first(k, x); })));
        break;
      }
      case Op::ActivateGrad: {
        const Activation k = n.act;
        accumulate(grads, ia,
                   g.cwiseProduct(a->unaryExpr(
                       [k](double x) { return detail::act_second(k, x); })));
        break;
      }
      case Op::Log:
        accumulate(grads, ia, g.cwiseQuotient(*a));
        break;
      case Op::Exp:
        accumulate(grads, ia, g.cwiseProduct(n.output->mat()));
        break;
      case Op::Reciprocal: {
        const Matrix& r = n.output->mat();
        accumulate(grads, ia, -g.cwiseProduct(r.cwiseProduct(r)));
        break;
      }
      case Op::Sum:
        accumulate(grads, ia, Matrix::Constant(a->rows(), a->cols(), g(0, 0)));
        break;
      case Op::RowSum:
        accumulate(grads, ia, g.replicate(1, a->cols()));
        break;
      case Op::RepeatRows: {
        const auto k = static_cast<Eigen::Index>(n.aux);
        Matrix ga = Matrix::Zero(a->rows(), a->cols());
        for (Eigen::Index i = 0; i < a->rows(); ++i) {
          ga.row(i) = g.middleRows(i * k, k).colwise().sum();
        }
        accumulate(grads, ia, std::move(ga));
        break;
      }
      case Op::TileRows: {
        const auto k = static_cast<Eigen::Index>(n.aux);
        Matrix ga = Matrix::Zero(a->rows(), a->cols());
        for (Eigen::Index t = 0; t < k; ++t) {
          ga += g.middleRows(t * a->rows(), a->rows());
        }
        accumulate(grads, ia, std::move(ga));
        break;
      }
      case Op::ExpandCols:
        accumulate(grads, ia, g.rowwise().sum());
        break;
      case Op::Reshape: {
        Matrix ga(a->rows(), a->cols());
        std::copy(g.data(), g.data() + g.size(), ga.data());
        accumulate(grads, ia, std::move(ga));
        break;
      }
      case Op::ConcatCols:
        if (ia != kNoNode) accumulate(grads, ia, g.leftCols(a->cols()));
        if (ib != kNoNode) accumulate(grads, ib, g.rightCols(b->cols()));
        break;
      case Op::SliceRows: {
        Matrix ga = Matrix::Zero(a->rows(), a->cols());
        ga.middleRows(static_cast<Eigen::Index>(n.aux), g.rows()) = g;
        accumulate(grads, ia, std::move(ga));
        break;
      }
      case Op::BatchedMatVec: {
        const Eigen::Index d = b->cols();
        if (ia != kNoNode) {
          Matrix ga(a->rows(), a->cols());
          for (Eigen::Index m = 0; m < b->rows(); ++m) {
            for (Eigen::Index i = 0; i < d; ++i) {
              for (Eigen::Index j = 0; j < d; ++j) {
                ga(m, i * d + j) = g(m, i) * (*b)(m, j);
              }
            }
          }
          accumulate(grads, ia, std::move(ga));
        }
        if (ib != kNoNode) {
          Matrix gb = Matrix::Zero(b->rows(), d);
          for (Eigen::Index m = 0; m < b->rows(); ++m) {
            for (Eigen::Index i = 0; i < d; ++i) {
              for (Eigen::Index j = 0; j < d; ++j) {
                gb(m, j) += (*a)(m, i * d + j) * g(m, i);
              }
            }
          }
          accumulate(grads, ib, std::move(gb));
        }
        break;
      }
    }
  }
  return result;
}

}  // namespace fbsnn
