#include "coefflab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace coefflab {

namespace {

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape() + " vs " +
                         b.shape());
  }
}

void softmax_row(std::span<const double> in, std::span<double> out) {
  const double peak = *std::max_element(in.begin(), in.end());
  double total = 0.0;
  for (std::size_t j = 0; j < in.size(); ++j) {
    out[j] = std::exp(in[j] - peak);
    total += out[j];
  }
  const double inv = 1.0 / total;
  for (double& v : out) v *= inv;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + a.shape() + " by " + b.shape());
  }
  const auto n = static_cast<std::int64_t>(a.rows());
  const std::size_t inner = a.cols();
  const std::size_t m = b.cols();
  Matrix c(a.rows(), m);
  const bool parallel = a.rows() * inner * m >= kParallelWorkThreshold;

#pragma omp parallel for schedule(static) if (parallel)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto ar = a.row(static_cast<std::size_t>(i));
    auto cr = c.row(static_cast<std::size_t>(i));
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = ar[k];
      const auto br = b.row(k);
      for (std::size_t j = 0; j < m; ++j) cr[j] += aik * br[j];
    }
  }
  return c;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  if (m.cols() == 0) return out;
  const auto n = static_cast<std::int64_t>(m.rows());
  const bool parallel = m.size() >= kParallelWorkThreshold;

#pragma omp parallel for schedule(static) if (parallel)
  for (std::int64_t i = 0; i < n; ++i) {
    softmax_row(m.row(static_cast<std::size_t>(i)), out.row(static_cast<std::size_t>(i)));
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape("add", a, b);
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape("subtract", a, b);
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
  return out;
}

Matrix scale(const Matrix& a, double c) {
  Matrix out = a;
  for (double& v : out.data()) v *= c;
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape("hadamard", a, b);
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return out;
}

double mse_loss(const Matrix& pred, const Matrix& target) {
  require_same_shape("mse_loss", pred, target);
  double total = 0.0;
  auto p = pred.data();
  auto t = target.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double diff = p[i] - t[i];
    total += diff * diff;
  }
  return total / static_cast<double>(p.size());
}

namespace reference {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + a.shape() + " by " + b.shape());
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  }
  return c;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (m.cols() == 0) continue;
    double peak = m(i, 0);
    for (std::size_t j = 1; j < m.cols(); ++j) peak = std::max(peak, m(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) total += std::exp(m(i, j) - peak);
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = std::exp(m(i, j) - peak) / total;
  }
  return out;
}

double mse_loss(const Matrix& pred, const Matrix& target) {
  require_same_shape("mse_loss", pred, target);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.rows(); ++i) {
    for (std::size_t j = 0; j < pred.cols(); ++j) {
      total += (pred(i, j) - target(i, j)) * (pred(i, j) - target(i, j));
    }
  }
  return total / static_cast<double>(pred.size());
}

}  // namespace reference

}  // namespace coefflab
