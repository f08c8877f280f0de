#pragma once

#include "coefflab/matrix.hpp"

namespace coefflab {

// Forward kernels on plain matrices. matmul and softmax_rows run their outer
// row loop under OpenMP once the problem is large enough; each output row is
// computed by one thread in a fixed order, so results are bit-identical for
// any thread count.

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
Matrix transpose(const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);
double mse_loss(const Matrix& pred, const Matrix& target);

/// a - b; convenience for optimizers and tests, not part of the tape op set.
Matrix subtract(const Matrix& a, const Matrix& b);

namespace reference {

// Serial implementations kept as test oracles and benchmark baselines.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& m);
double mse_loss(const Matrix& pred, const Matrix& target);

}  // namespace reference

/// Minimum multiply-add count before matmul spins up an OpenMP team.
inline constexpr std::size_t kParallelWorkThreshold = 1u << 15;

}  // namespace coefflab
