#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "coefflab/attention.hpp"

namespace coefflab {

/// How alpha maps to the coefficient applied in the forward pass.
enum class CoeffMode {
  DirectRandomInit,    // alpha' = alpha, alpha ~ Gaussian
  DirectIdentityInit,  // alpha' = alpha, alpha = I
  ResidualZeroInit,    // alpha' = alpha + I, alpha = 0
};

std::string to_string(CoeffMode mode);
CoeffMode parse_coeff_mode(std::string_view name);

inline bool is_residual(CoeffMode mode) { return mode == CoeffMode::ResidualZeroInit; }

/// Tunable H x H subspace coefficient of one attention layer.
struct SubspaceCoefficient {
  Matrix alpha;
  CoeffMode mode = CoeffMode::ResidualZeroInit;
  double dropout_p = 0.0;
  // Inverted dropout: survivors are scaled by 1/(1-p) during training.
  bool rescale_survivors = true;
  // When false the dropout op is skipped entirely, even during training.
  bool dropout_enabled = true;

  std::size_t heads() const { return alpha.rows(); }
};

/// Std of the Gaussian used by DirectRandomInit.
inline constexpr double kRandomAlphaStd = 0.02;

SubspaceCoefficient make_coefficient(std::size_t heads, CoeffMode mode, double dropout_p,
                                     Rng& rng, double random_std = kRandomAlphaStd);

void validate(const SubspaceCoefficient& c);

struct EffectiveCoefficient {
  Matrix alpha_prime;
  // Set when every entry was dropped in a direct mode, leaving an all-zero
  // coefficient that silences the layer.
  bool all_dropped = false;
};

/// Element-wise keep mask: each entry is 0 with probability p, otherwise 1 or
/// 1/(1-p) when rescaling. p == 1 yields all zeros.
Matrix dropout_mask(std::size_t heads, double p, bool rescale, Rng& rng);

/// alpha' = Dropout(alpha; p) [+ I in residual mode]. Dropout only applies in
/// training; rng is consumed only when a mask is drawn.
EffectiveCoefficient effective_coefficient(const SubspaceCoefficient& c, bool training,
                                           Rng& rng);

/// Tape version: alpha is the recorded (possibly trainable) coefficient.
Var effective_coefficient(const Var& alpha, const SubspaceCoefficient& c, bool training,
                          Rng& rng);

/// H x H grid of N x N matrices, cell (h, i) filled with alpha'[h, i].
template <class T>
using CoefficientGrid = std::vector<std::vector<T>>;

inline Matrix broadcast_entry(const Matrix& m, std::size_t r, std::size_t c, std::size_t n) {
  return Matrix(n, n, m(r, c));
}

/// Same value as the Matrix overload, built from two matmuls with constant
/// selectors so the entry stays differentiable.
Var broadcast_entry(const Var& m, std::size_t r, std::size_t c, std::size_t n);

template <class T>
CoefficientGrid<T> broadcast_coefficients(const T& alpha_prime, std::size_t n) {
  const std::size_t heads = value_of(alpha_prime).rows();
  CoefficientGrid<T> grid(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    grid[h].reserve(heads);
    for (std::size_t i = 0; i < heads; ++i) grid[h].push_back(broadcast_entry(alpha_prime, h, i, n));
  }
  return grid;
}

/// F_hat^h = sum_i alpha'[h, i] F^i, using a precomputed coefficient grid.
template <class T>
FilterSubspaceT<T> combine_filters(const FilterSubspaceT<T>& fs, const CoefficientGrid<T>& grid) {
  const std::size_t heads = fs.atoms.size();
  if (grid.size() != heads || heads == 0) {
    throw ArityError("combine_filters: " + std::to_string(heads) + " atoms but " +
                     std::to_string(grid.size()) + "x" + std::to_string(grid.size()) +
                     " coefficient");
  }
  FilterSubspaceT<T> out;
  out.atoms.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    T atom;
    for (std::size_t i = 0; i < heads; ++i) {
      T term = hadamard(grid[h][i], fs.atoms[i]);
      atom = i == 0 ? term : add(atom, term);
    }
    out.atoms.push_back(atom);
  }
  return out;
}

template <class T>
FilterSubspaceT<T> combine_filters(const FilterSubspaceT<T>& fs, const T& alpha_prime) {
  const Matrix& a = value_of(alpha_prime);
  if (a.rows() != a.cols() || a.rows() != fs.atoms.size()) {
    throw ArityError("combine_filters: coefficient " + a.shape() + " for " +
                     std::to_string(fs.atoms.size()) + " atoms");
  }
  return combine_filters(fs, broadcast_coefficients(alpha_prime, value_of(fs.atoms[0]).rows()));
}

/// O = sum_h sum_i alpha'[h, i] F^i(X) X W^h.
template <class T>
T coeff_attention_forward(const T& x, const AttentionParamsT<T>& p, const T& alpha_prime) {
  return graph_conv_forward(x, combine_filters(filter_subspace(x, p), alpha_prime),
                            head_weights(p));
}

/// Evaluates the coefficient (with dropout when training) and runs the layer.
Matrix coeff_attention_forward(const Matrix& x, const AttentionParams& p,
                               const SubspaceCoefficient& c, bool training, Rng& rng);

/// Trainable coefficients across a model: H^2 per attention layer.
std::size_t count_coeff_params(std::size_t heads, std::size_t layers);

}  // namespace coefflab
