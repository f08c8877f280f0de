#include "coefflab/attention.hpp"

namespace coefflab {

void validate(const AttentionParams& p) {
  if (p.heads == 0) throw DimensionError("attention params: zero heads");
  if (p.wq.size() != p.heads || p.wk.size() != p.heads || p.wv.size() != p.heads) {
    throw ArityError("attention params: expected " + std::to_string(p.heads) +
                     " per-head matrices");
  }
  if (p.wo.rows() != p.wo.cols()) {
    throw DimensionError("attention params: W_o must be square, got " + p.wo.shape());
  }
  const std::size_t co = p.wo.rows();
  if (co % p.heads != 0) {
    throw DimensionError("attention params: Co=" + std::to_string(co) +
                         " not divisible by H=" + std::to_string(p.heads));
  }
  const std::size_t ci = p.wq[0].rows();
  const std::size_t d = co / p.heads;
  for (std::size_t h = 0; h < p.heads; ++h) {
    for (const Matrix* w : {&p.wq[h], &p.wk[h], &p.wv[h]}) {
      if (w->rows() != ci || w->cols() != d) {
        throw DimensionError("attention params: head " + std::to_string(h) + " weight " +
                             w->shape() + ", expected " + std::to_string(ci) + "x" +
                             std::to_string(d));
      }
    }
  }
}

AttentionParams random_attention_params(const AttentionDims& dims, Rng& rng, double stddev) {
  if (dims.heads == 0 || dims.out_dim % dims.heads != 0) {
    throw DimensionError("Co=" + std::to_string(dims.out_dim) + " not divisible by H=" +
                         std::to_string(dims.heads));
  }
  const std::size_t d = dims.out_dim / dims.heads;
  AttentionParams p;
  p.heads = dims.heads;
  for (std::size_t h = 0; h < dims.heads; ++h) {
    p.wq.push_back(gaussian(dims.in_dim, d, stddev, rng));
    p.wk.push_back(gaussian(dims.in_dim, d, stddev, rng));
    p.wv.push_back(gaussian(dims.in_dim, d, stddev, rng));
  }
  p.wo = gaussian(dims.out_dim, dims.out_dim, stddev, rng);
  return p;
}

AttentionVars record_parameters(Tape& tape, const AttentionParams& p) {
  AttentionVars v;
  v.heads = p.heads;
  for (std::size_t h = 0; h < p.heads; ++h) {
    v.wq.push_back(tape.parameter(p.wq[h]));
    v.wk.push_back(tape.parameter(p.wk[h]));
    v.wv.push_back(tape.parameter(p.wv[h]));
  }
  v.wo = tape.parameter(p.wo);
  return v;
}

Matrix block_selector(std::size_t h, std::size_t heads, std::size_t out_dim) {
  const std::size_t d = out_dim / heads;
  Matrix s(d, out_dim);
  for (std::size_t j = 0; j < d; ++j) s(j, h * d + j) = 1.0;
  return s;
}

bool is_row_stochastic(const Matrix& m, double tol) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double total = 0.0;
    for (double v : m.row(r)) {
      const bool in_range = v > 0.0 && (v < 1.0 || (m.cols() == 1 && v == 1.0));
      if (!in_range) return false;
      total += v;
    }
    if (std::abs(total - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace coefflab
