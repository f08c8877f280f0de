#include "coefflab/coeff.hpp"

#include <random>

namespace coefflab {

std::string to_string(CoeffMode mode) {
  switch (mode) {
    case CoeffMode::DirectRandomInit:
      return "direct-random-init";
    case CoeffMode::DirectIdentityInit:
      return "direct-identity-init";
    case CoeffMode::ResidualZeroInit:
      return "residual-zero-init";
  }
  return "unknown";
}

CoeffMode parse_coeff_mode(std::string_view name) {
  if (name == "direct-random-init") return CoeffMode::DirectRandomInit;
  if (name == "direct-identity-init") return CoeffMode::DirectIdentityInit;
  if (name == "residual-zero-init") return CoeffMode::ResidualZeroInit;
  throw UsageError("unknown coefficient mode '" + std::string(name) + "'");
}

SubspaceCoefficient make_coefficient(std::size_t heads, CoeffMode mode, double dropout_p,
                                     Rng& rng, double random_std) {
  SubspaceCoefficient c;
  c.mode = mode;
  c.dropout_p = dropout_p;
  switch (mode) {
    case CoeffMode::DirectRandomInit:
      c.alpha = gaussian(heads, heads, random_std, rng);
      break;
    case CoeffMode::DirectIdentityInit:
      c.alpha = Matrix::identity(heads);
      break;
    case CoeffMode::ResidualZeroInit:
      c.alpha = Matrix::zeros(heads, heads);
      break;
  }
  validate(c);
  return c;
}

void validate(const SubspaceCoefficient& c) {
  if (c.alpha.rows() == 0 || c.alpha.rows() != c.alpha.cols()) {
    throw DimensionError("subspace coefficient must be square HxH, got " + c.alpha.shape());
  }
  if (!(c.dropout_p >= 0.0 && c.dropout_p <= 1.0)) {
    throw UsageError("dropout probability must lie in [0, 1], got " +
                     std::to_string(c.dropout_p));
  }
}

Matrix dropout_mask(std::size_t heads, double p, bool rescale, Rng& rng) {
  Matrix mask(heads, heads);
  if (p >= 1.0) return mask;
  const double keep_value = rescale ? 1.0 / (1.0 - p) : 1.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& m : mask.data()) m = u(rng) < p ? 0.0 : keep_value;
  return mask;
}

namespace {

bool applies_dropout(const SubspaceCoefficient& c, bool training) {
  return training && c.dropout_enabled;
}

}  // namespace

EffectiveCoefficient effective_coefficient(const SubspaceCoefficient& c, bool training,
                                           Rng& rng) {
  validate(c);
  EffectiveCoefficient out;
  out.alpha_prime = c.alpha;
  if (applies_dropout(c, training)) {
    out.alpha_prime = hadamard(out.alpha_prime,
                               dropout_mask(c.heads(), c.dropout_p, c.rescale_survivors, rng));
    out.all_dropped = !is_residual(c.mode) && c.dropout_p >= 1.0;
  }
  if (is_residual(c.mode)) out.alpha_prime = add(out.alpha_prime, Matrix::identity(c.heads()));
  return out;
}

Var effective_coefficient(const Var& alpha, const SubspaceCoefficient& c, bool training,
                          Rng& rng) {
  validate(c);
  Tape& tape = *alpha.tape();
  Var out = alpha;
  if (applies_dropout(c, training)) {
    out = hadamard(out, tape.constant(dropout_mask(c.heads(), c.dropout_p,
                                                   c.rescale_survivors, rng)));
  }
  if (is_residual(c.mode)) out = add(out, tape.constant(Matrix::identity(c.heads())));
  return out;
}

Var broadcast_entry(const Var& m, std::size_t r, std::size_t c, std::size_t n) {
  const std::size_t heads = m.rows();
  Matrix pick_row(n, heads);
  for (std::size_t i = 0; i < n; ++i) pick_row(i, r) = 1.0;
  Matrix pick_col(heads, n);
  for (std::size_t j = 0; j < n; ++j) pick_col(c, j) = 1.0;
  Tape& tape = *m.tape();
  return matmul(matmul(tape.constant(std::move(pick_row)), m), tape.constant(std::move(pick_col)));
}

Matrix coeff_attention_forward(const Matrix& x, const AttentionParams& p,
                               const SubspaceCoefficient& c, bool training, Rng& rng) {
  if (c.heads() != p.heads) {
    throw ArityError("coefficient is " + c.alpha.shape() + " but layer has " +
                     std::to_string(p.heads) + " heads");
  }
  const EffectiveCoefficient eff = effective_coefficient(c, training, rng);
  return coeff_attention_forward(x, p, eff.alpha_prime);
}

std::size_t count_coeff_params(std::size_t heads, std::size_t layers) {
  if (heads == 0 || layers == 0) throw UsageError("count_coeff_params: H and layers must be >= 1");
  return heads * heads * layers;
}

}  // namespace coefflab
