#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>

#include "coefflab/matrix.hpp"

namespace coefflab {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient of a scalar loss with respect to every parameter leaf of a tape.
class Gradients {
 public:
  /// Throws UsageError if v is not a parameter leaf of the differentiated tape.
  const Matrix& operator[](const Var& v) const;
  std::size_t size() const noexcept { return by_leaf_.size(); }

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::map<std::size_t, Matrix> by_leaf_;
};

/// Reverse-mode recorder over the op set {matmul, softmax_rows, add, scale,
/// transpose, hadamard, mse_loss}. Nodes are appended in evaluation order, so
/// operands always precede their results. One tape per training step; a tape
/// is not thread-safe but independent tapes may be used concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var parameter(Matrix value);
  Var constant(Matrix value);

  const Matrix& value(const Var& v) const { return nodes_.at(v.id()).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Backpropagates from a 1x1 loss recorded on this tape.
  Gradients backward(const Var& loss) const;

  // Recording entry points used by the free-function overloads below.
  Var record_matmul(const Var& a, const Var& b);
  Var record_softmax_rows(const Var& a);
  Var record_add(const Var& a, const Var& b);
  Var record_scale(const Var& a, double c);
  Var record_transpose(const Var& a);
  Var record_hadamard(const Var& a, const Var& b);
  Var record_mse(const Var& pred, const Var& target);

 private:
  enum class Op { Leaf, MatMul, Softmax, Add, Scale, Transpose, Hadamard, Mse };
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  struct Node {
    Op op = Op::Leaf;
    std::size_t lhs = kNone;
    std::size_t rhs = kNone;
    double scalar = 0.0;
    Matrix value;
    bool needs_grad = false;
    bool parameter = false;
  };

  Var push(Node node);
  bool needs(std::size_t id) const { return id != kNone && nodes_[id].needs_grad; }
  void check_owned(const Var& v) const;

  // deque keeps references from value() stable as the tape grows
  std::deque<Node> nodes_;
};

Var matmul(const Var& a, const Var& b);
Var softmax_rows(const Var& a);
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var transpose(const Var& a);
Var hadamard(const Var& a, const Var& b);
Var mse_loss(const Var& pred, const Var& target);

/// Sum of all entries as a 1x1 node, built from two matmuls with ones.
Var sum_all(const Var& a);

/// Backpropagates from loss. A default-constructed Var means no tape was
/// active and raises UsageError.
Gradients backward(const Var& loss);

/// Central-difference estimate of d f / d param, entry by entry.
Matrix finite_difference_grad(const std::function<double(const Matrix&)>& f,
                              const Matrix& param, double eps = 1e-5);

/// Worst mismatch between an analytic and a numeric gradient: relative error
/// where either magnitude reaches abs_floor, absolute error below it.
double gradient_mismatch(const Matrix& analytic, const Matrix& numeric,
                         double abs_floor = 1e-8);

}  // namespace coefflab
