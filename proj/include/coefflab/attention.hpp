#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "coefflab/kernels.hpp"
#include "coefflab/random.hpp"
#include "coefflab/tape.hpp"

namespace coefflab {

// Attention is written once as templates over T = Matrix (plain evaluation)
// or T = Var (recorded on a Tape for differentiation). Both instantiations
// run the same kernels in the same order.

inline Matrix constant_like(const Matrix&, Matrix m) { return m; }
inline Var constant_like(const Var& like, Matrix m) { return like.tape()->constant(std::move(m)); }
inline const Matrix& value_of(const Matrix& m) { return m; }
inline const Matrix& value_of(const Var& v) { return v.value(); }

/// Per-layer projection weights for H heads.
///
/// wq, wk, wv hold one Ci x (Co/H) matrix per head; wo is Co x Co. Rows of wo
/// are split contiguously into H blocks in concat order, so head h's output
/// block is rows [h*Co/H, (h+1)*Co/H) and W^h = wv[h] * wo[block h].
template <class T>
struct AttentionParamsT {
  std::size_t heads = 0;
  std::vector<T> wq;
  std::vector<T> wk;
  std::vector<T> wv;
  T wo;

  std::size_t in_dim() const { return value_of(wq.at(0)).rows(); }
  std::size_t out_dim() const { return value_of(wo).cols(); }
  std::size_t head_dim() const { return out_dim() / heads; }
};

using AttentionParams = AttentionParamsT<Matrix>;
using AttentionVars = AttentionParamsT<Var>;

struct AttentionDims {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t heads = 1;
};

/// The H attention maps of one layer, each N x N.
template <class T>
struct FilterSubspaceT {
  std::vector<T> atoms;
  std::size_t heads() const { return atoms.size(); }
};

using FilterSubspace = FilterSubspaceT<Matrix>;

/// Throws DimensionError unless every shape agrees with dims-derived layout.
void validate(const AttentionParams& p);

/// Gaussian weights (default std 0.02) with the given dims.
AttentionParams random_attention_params(const AttentionDims& dims, Rng& rng,
                                        double stddev = 0.02);

/// Records every weight of p as a trainable parameter on tape.
AttentionVars record_parameters(Tape& tape, const AttentionParams& p);

/// d x Co matrix selecting column block h (d = Co / H).
Matrix block_selector(std::size_t h, std::size_t heads, std::size_t out_dim);

/// Row-stochasticity check: entries in (0, 1), rows sum to 1 within tol.
bool is_row_stochastic(const Matrix& m, double tol = 1e-12);

template <class T>
T attention_map(const T& x, const T& wq, const T& wk, bool scale_logits = false) {
  const Matrix& xv = value_of(x);
  const Matrix& qv = value_of(wq);
  const Matrix& kv = value_of(wk);
  if (qv.rows() != xv.cols() || kv.rows() != xv.cols() || qv.cols() != kv.cols()) {
    throw DimensionError("attention_map: X " + xv.shape() + ", W_q " + qv.shape() +
                         ", W_k " + kv.shape());
  }
  T logits = matmul(matmul(x, wq), transpose(matmul(x, wk)));
  if (scale_logits) logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(qv.cols())));
  return softmax_rows(logits);
}

template <class T>
T single_head_attention(const T& x, const T& wq, const T& wk, const T& wv) {
  if (value_of(wv).rows() != value_of(x).cols()) {
    throw DimensionError("single_head_attention: X " + value_of(x).shape() + ", W_v " +
                         value_of(wv).shape());
  }
  return matmul(attention_map(x, wq, wk), matmul(x, wv));
}

/// Rows of W_o feeding head h, i.e. (W_o^h)^T, shape (Co/H) x Co.
template <class T>
T output_block(const AttentionParamsT<T>& p, std::size_t h) {
  const std::size_t co = value_of(p.wo).rows();
  return matmul(constant_like(p.wo, block_selector(h, p.heads, co)), p.wo);
}

/// W^h = W_vo^h = W_v^h (W_o^h)^T, shape Ci x Co.
template <class T>
T head_weight(const AttentionParamsT<T>& p, std::size_t h) {
  return matmul(p.wv.at(h), output_block(p, h));
}

template <class T>
std::vector<T> head_weights(const AttentionParamsT<T>& p) {
  std::vector<T> out;
  out.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) out.push_back(head_weight(p, h));
  return out;
}

/// Concat[O^1, ..., O^H] W_o with O^h = A^h X W_v^h.
template <class T>
T multi_head_concat(const T& x, const AttentionParamsT<T>& p) {
  const std::size_t co = value_of(p.wo).rows();
  T concat;
  for (std::size_t h = 0; h < p.heads; ++h) {
    T head = single_head_attention(x, p.wq.at(h), p.wk.at(h), p.wv.at(h));
    T placed = matmul(head, constant_like(x, block_selector(h, p.heads, co)));
    concat = h == 0 ? placed : add(concat, placed);
  }
  return matmul(concat, p.wo);
}

/// sum_h A^h (X W^h).
template <class T>
T multi_head_sum(const T& x, const AttentionParamsT<T>& p) {
  T out;
  for (std::size_t h = 0; h < p.heads; ++h) {
    T term = matmul(attention_map(x, p.wq.at(h), p.wk.at(h)), matmul(x, head_weight(p, h)));
    out = h == 0 ? term : add(out, term);
  }
  return out;
}

template <class T>
FilterSubspaceT<T> filter_subspace(const T& x, const AttentionParamsT<T>& p) {
  FilterSubspaceT<T> fs;
  fs.atoms.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    fs.atoms.push_back(attention_map(x, p.wq.at(h), p.wk.at(h)));
  }
  return fs;
}

/// Decomposed graph convolution O = sum_h (F^h X) W^h.
template <class T>
T graph_conv_forward(const T& x, const FilterSubspaceT<T>& fs, const std::vector<T>& weights) {
  if (fs.atoms.size() != weights.size() || fs.atoms.empty()) {
    throw ArityError("graph_conv_forward: " + std::to_string(fs.atoms.size()) +
                     " filter atoms but " + std::to_string(weights.size()) + " weights");
  }
  T out;
  for (std::size_t h = 0; h < weights.size(); ++h) {
    T term = matmul(matmul(fs.atoms[h], x), weights[h]);
    out = h == 0 ? term : add(out, term);
  }
  return out;
}

}  // namespace coefflab
