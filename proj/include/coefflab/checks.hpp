#pragma once

#include <cstddef>
#include <cstdint>

#include "coefflab/hull.hpp"

namespace coefflab {

/// Frobenius relative error ||a - n|| / max(||a||, ||n||), absolute below floor.
double relative_gradient_error(const Matrix& analytic, const Matrix& numeric,
                               double floor = 1e-8);

inline constexpr double kEquivalenceTol = 1e-10;
inline constexpr double kGradientTol = 1e-5;
// Share of generic instances on which the witness search must succeed.
inline constexpr double kExpansionSuccessRate = 0.95;

/// Concat, per-head sum and graph-convolution forms on random instances with
/// N <= 16, Ci <= 8, H in {1, 2, 4}. Slack is the largest pairwise deviation.
BoundedReport verify_three_form_equivalence(std::size_t trials, std::uint64_t seed);

/// Backward pass against central differences for single-head, multi-head and
/// coefficient-augmented attention (cycled by trial), over every trainable
/// parameter including alpha. Slack is the worst relative error.
BoundedReport verify_gradients(std::size_t trials, std::uint64_t seed);

}  // namespace coefflab
