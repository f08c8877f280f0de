#include "coefflab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "coefflab/kernels.hpp"

namespace coefflab {

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw UsageError("Var is not attached to a tape");
  return tape_->value(*this);
}

const Matrix& Gradients::operator[](const Var& v) const {
  if (v.tape() != tape_) throw UsageError("Var belongs to a different tape");
  auto it = by_leaf_.find(v.id());
  if (it == by_leaf_.end()) throw UsageError("Var is not a parameter leaf");
  return it->second;
}

Var Tape::push(Node node) {
  if (!all_finite(node.value)) throw NumericError("non-finite value recorded on tape");
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(const Var& v) const {
  if (v.tape() != this) throw UsageError("operand recorded on a different tape");
}

Var Tape::parameter(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  n.parameter = true;
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::record_matmul(const Var& a, const Var& b) {
  check_owned(a);
  check_owned(b);
  Node n{Op::MatMul, a.id(), b.id(), 0.0, coefflab::matmul(a.value(), b.value()),
         needs(a.id()) || needs(b.id()), false};
  return push(std::move(n));
}

Var Tape::record_softmax_rows(const Var& a) {
  check_owned(a);
  Node n{Op::Softmax, a.id(), kNone, 0.0, coefflab::softmax_rows(a.value()), needs(a.id()),
         false};
  return push(std::move(n));
}

Var Tape::record_add(const Var& a, const Var& b) {
  check_owned(a);
  check_owned(b);
  Node n{Op::Add, a.id(), b.id(), 0.0, coefflab::add(a.value(), b.value()),
         needs(a.id()) || needs(b.id()), false};
  return push(std::move(n));
}

Var Tape::record_scale(const Var& a, double c) {
  check_owned(a);
  Node n{Op::Scale, a.id(), kNone, c, coefflab::scale(a.value(), c), needs(a.id()), false};
  return push(std::move(n));
}

Var Tape::record_transpose(const Var& a) {
  check_owned(a);
  Node n{Op::Transpose, a.id(), kNone, 0.0, coefflab::transpose(a.value()), needs(a.id()),
         false};
  return push(std::move(n));
}

Var Tape::record_hadamard(const Var& a, const Var& b) {
  check_owned(a);
  check_owned(b);
  Node n{Op::Hadamard, a.id(), b.id(), 0.0, coefflab::hadamard(a.value(), b.value()),
         needs(a.id()) || needs(b.id()), false};
  return push(std::move(n));
}

Var Tape::record_mse(const Var& pred, const Var& target) {
  check_owned(pred);
  check_owned(target);
  Node n{Op::Mse, pred.id(), target.id(), 0.0,
         Matrix(1, 1, coefflab::mse_loss(pred.value(), target.value())),
         needs(pred.id()) || needs(target.id()), false};
  return push(std::move(n));
}

namespace {

void accumulate(Matrix& into, Matrix&& delta) {
  if (into.empty()) {
    into = std::move(delta);
    return;
  }
  auto d = delta.data();
  auto o = into.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += d[i];
}

}  // namespace

Gradients Tape::backward(const Var& loss) const {
  check_owned(loss);
  const Matrix& lv = loss.value();
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw UsageError("backward: loss must be 1x1, got " + lv.shape());
  }

  std::vector<Matrix> grad(nodes_.size());
  grad[loss.id()] = Matrix(1, 1, 1.0);

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.needs_grad || grad[id].empty() || n.op == Op::Leaf) continue;
    const Matrix& g = grad[id];

    switch (n.op) {
      case Op::MatMul: {
        const Matrix& a = nodes_[n.lhs].value;
        const Matrix& b = nodes_[n.rhs].value;
        if (needs(n.lhs)) accumulate(grad[n.lhs], coefflab::matmul(g, coefflab::transpose(b)));
        if (needs(n.rhs)) accumulate(grad[n.rhs], coefflab::matmul(coefflab::transpose(a), g));
        break;
      }
      case Op::Softmax: {
        // dX = Y .* (dY - rowsum(dY .* Y))
        const Matrix& y = n.value;
        Matrix dx(y.rows(), y.cols());
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (g(r, c) - dot);
        }
        accumulate(grad[n.lhs], std::move(dx));
        break;
      }
      case Op::Add:
        if (needs(n.lhs)) accumulate(grad[n.lhs], Matrix(g));
        if (needs(n.rhs)) accumulate(grad[n.rhs], Matrix(g));
        break;
      case Op::Scale:
        accumulate(grad[n.lhs], coefflab::scale(g, n.scalar));
        break;
      case Op::Transpose:
        accumulate(grad[n.lhs], coefflab::transpose(g));
        break;
      case Op::Hadamard:
        if (needs(n.lhs)) accumulate(grad[n.lhs], coefflab::hadamard(g, nodes_[n.rhs].value));
        if (needs(n.rhs)) accumulate(grad[n.rhs], coefflab::hadamard(g, nodes_[n.lhs].value));
        break;
      case Op::Mse: {
        const Matrix& p = nodes_[n.lhs].value;
        const Matrix& t = nodes_[n.rhs].value;
        const double k = 2.0 * g(0, 0) / static_cast<double>(p.size());
        Matrix d = coefflab::scale(coefflab::subtract(p, t), k);
        if (needs(n.rhs)) accumulate(grad[n.rhs], coefflab::scale(d, -1.0));
        if (needs(n.lhs)) accumulate(grad[n.lhs], std::move(d));
        break;
      }
      case Op::Leaf:
        break;
    }
  }

  Gradients out;
  out.tape_ = this;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.parameter) continue;
    out.by_leaf_.emplace(id, grad[id].empty() ? Matrix(n.value.rows(), n.value.cols())
                                              : std::move(grad[id]));
  }
  return out;
}

Var matmul(const Var& a, const Var& b) {
  if (!a.valid()) throw UsageError("matmul: operand has no tape");
  return a.tape()->record_matmul(a, b);
}
Var softmax_rows(const Var& a) {
  if (!a.valid()) throw UsageError("softmax_rows: operand has no tape");
  return a.tape()->record_softmax_rows(a);
}
Var add(const Var& a, const Var& b) {
  if (!a.valid()) throw UsageError("add: operand has no tape");
  return a.tape()->record_add(a, b);
}
Var scale(const Var& a, double c) {
  if (!a.valid()) throw UsageError("scale: operand has no tape");
  return a.tape()->record_scale(a, c);
}
Var transpose(const Var& a) {
  if (!a.valid()) throw UsageError("transpose: operand has no tape");
  return a.tape()->record_transpose(a);
}
Var hadamard(const Var& a, const Var& b) {
  if (!a.valid()) throw UsageError("hadamard: operand has no tape");
  return a.tape()->record_hadamard(a, b);
}
Var mse_loss(const Var& pred, const Var& target) {
  if (!pred.valid()) throw UsageError("mse_loss: operand has no tape");
  return pred.tape()->record_mse(pred, target);
}

Var sum_all(const Var& a) {
  Tape& t = *a.tape();
  Var left = t.constant(Matrix::ones(1, a.rows()));
  Var right = t.constant(Matrix::ones(a.cols(), 1));
  return matmul(matmul(left, a), right);
}

Gradients backward(const Var& loss) {
  if (!loss.valid()) throw UsageError("backward called with no active tape");
  return loss.tape()->backward(loss);
}

Matrix finite_difference_grad(const std::function<double(const Matrix&)>& f,
                              const Matrix& param, double eps) {
  if (!(eps > 0.0)) throw UsageError("finite_difference_grad: eps must be positive");
  Matrix grad(param.rows(), param.cols());
  Matrix probe = param;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double base = param.data()[i];
    probe.data()[i] = base + eps;
    const double up = f(probe);
    probe.data()[i] = base - eps;
    const double down = f(probe);
    probe.data()[i] = base;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_difference_grad: non-finite objective at entry " +
                         std::to_string(i));
    }
    grad.data()[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double gradient_mismatch(const Matrix& analytic, const Matrix& numeric, double abs_floor) {
  if (!analytic.same_shape(numeric)) {
    throw DimensionError("gradient_mismatch: shapes " + analytic.shape() + " vs " +
                         numeric.shape());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i];
    const double n = numeric.data()[i];
    const double mag = std::max(std::abs(a), std::abs(n));
    const double err = mag < abs_floor ? std::abs(a - n) : std::abs(a - n) / mag;
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace coefflab
