#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coefflab/attention.hpp"
#include "coefflab/toy.hpp"

using namespace coefflab;

namespace {

AttentionParams random_params(std::size_t ci, std::size_t co, std::size_t heads, Rng& rng,
                              double stddev = 0.5) {
  return random_attention_params({ci, co, heads}, rng, stddev);
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(perm[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

TEST(AttentionMap, IdentityInputsGiveSigmoidPair) {
  Matrix a = attention_map(Matrix::identity(2), Matrix::identity(2), Matrix::identity(2));
  const double e = std::exp(1.0);
  EXPECT_NEAR(a(0, 0), e / (e + 1), 1e-15);
  EXPECT_NEAR(a(0, 1), 1 / (e + 1), 1e-15);
  EXPECT_NEAR(a(1, 0), 1 / (e + 1), 1e-15);
  EXPECT_NEAR(a(1, 1), e / (e + 1), 1e-15);
}

TEST(AttentionMap, ZeroQueryGivesUniformMap) {
  Rng rng(1);
  Matrix x = gaussian(5, 3, 1.0, rng);
  Matrix a = attention_map(x, Matrix::zeros(3, 2), gaussian(3, 2, 1.0, rng));
  for (double v : a.data()) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(AttentionMap, ToyGraphRowsSumToOne) {
  Rng rng(0);
  const ToyInstance toy = build_toy_instance();
  Matrix a = attention_map(toy.x, gaussian(2, 2, 1.0, rng), gaussian(2, 2, 1.0, rng));
  EXPECT_TRUE(is_row_stochastic(a, 1e-12));
}

TEST(AttentionMap, ShapeMismatch) {
  EXPECT_THROW(attention_map(Matrix(4, 3), Matrix(2, 2), Matrix(2, 2)), DimensionError);
  EXPECT_THROW(attention_map(Matrix(4, 3), Matrix(3, 2), Matrix(3, 1)), DimensionError);
}

TEST(AttentionMap, OptionalLogitScaling) {
  Rng rng(2);
  Matrix x = gaussian(4, 4, 1.0, rng), wq = gaussian(4, 4, 1.0, rng), wk = gaussian(4, 4, 1.0, rng);
  Matrix scaled = attention_map(x, wq, wk, true);
  Matrix manual = softmax_rows(scale(matmul(matmul(x, wq), transpose(matmul(x, wk))), 0.5));
  EXPECT_LT(max_abs_diff(scaled, manual), 1e-15);
}

TEST(SingleHead, UniformMapAveragesRows) {
  Rng rng(3);
  Matrix x = gaussian(6, 3, 1.0, rng);
  Matrix out = single_head_attention(x, Matrix::zeros(3, 2), gaussian(3, 2, 1.0, rng),
                                     Matrix::identity(3));
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < 6; ++r) mean += x(r, c);
    mean /= 6.0;
    for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(out(r, c), mean, 1e-14);
  }
}

TEST(SingleHead, SingleTokenPassesValueProjection) {
  Rng rng(4);
  Matrix x = gaussian(1, 3, 1.0, rng), wv = gaussian(3, 2, 1.0, rng);
  EXPECT_EQ(single_head_attention(x, gaussian(3, 2, 1.0, rng), gaussian(3, 2, 1.0, rng), wv),
            matmul(x, wv));
}

TEST(SingleHead, IsDefinitionalComposition) {
  Rng rng(5);
  Matrix x = gaussian(7, 4, 1.0, rng), wq = gaussian(4, 3, 1.0, rng), wk = gaussian(4, 3, 1.0, rng),
         wv = gaussian(4, 5, 1.0, rng);
  EXPECT_EQ(single_head_attention(x, wq, wk, wv), matmul(attention_map(x, wq, wk), matmul(x, wv)));
}

TEST(MultiHead, SingleHeadWithIdentityOutputMatchesSingleHeadAttention) {
  Rng rng(6);
  AttentionParams p = random_params(3, 4, 1, rng);
  p.wo = Matrix::identity(4);
  Matrix x = gaussian(5, 3, 1.0, rng);
  const Matrix expected = single_head_attention(x, p.wq[0], p.wk[0], p.wv[0]);
  EXPECT_LT(max_abs_diff(multi_head_concat(x, p), expected), 1e-14);
  EXPECT_LT(max_abs_diff(multi_head_sum(x, p), expected), 1e-14);
}

TEST(MultiHead, SingleHeadSumUsesTransposedOutputBlock) {
  Rng rng(7);
  AttentionParams p = random_params(3, 4, 1, rng);
  Matrix x = gaussian(5, 3, 1.0, rng);
  Matrix expected = matmul(matmul(attention_map(x, p.wq[0], p.wk[0]), matmul(x, p.wv[0])), p.wo);
  EXPECT_LT(max_abs_diff(multi_head_sum(x, p), expected), 1e-13);
}

TEST(MultiHead, UniformMapsGiveIdenticalTokenOutputs) {
  Rng rng(8);
  AttentionParams p = random_params(3, 4, 2, rng);
  for (auto& wq : p.wq) wq = Matrix::zeros(3, 2);
  Matrix out = multi_head_sum(gaussian(6, 3, 1.0, rng), p);
  for (std::size_t r = 1; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) EXPECT_NEAR(out(r, c), out(0, c), 1e-14);
  }
}

TEST(MultiHead, ThreeFormsAgreeOnRandomInstances) {
  Rng rng(9);
  std::uniform_int_distribution<std::size_t> tokens(1, 16), in_dim(1, 8), out_mult(1, 3);
  for (std::size_t heads : {1u, 2u, 4u}) {
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t ci = in_dim(rng), co = heads * out_mult(rng);
      AttentionParams p = random_params(ci, co, heads, rng);
      Matrix x = gaussian(tokens(rng), ci, 1.0, rng);
      const Matrix concat = multi_head_concat(x, p);
      const Matrix sum = multi_head_sum(x, p);
      const Matrix conv = graph_conv_forward(x, filter_subspace(x, p), head_weights(p));
      EXPECT_LT(max_abs_diff(concat, sum), 1e-10);
      EXPECT_LT(max_abs_diff(sum, conv), 1e-10);
    }
  }
}

TEST(MultiHead, PermutationEquivariance) {
  Rng rng(10);
  AttentionParams p = random_params(4, 4, 2, rng);
  Matrix x = gaussian(7, 4, 1.0, rng);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  EXPECT_LT(max_abs_diff(multi_head_sum(permute_rows(x, perm), p),
                         permute_rows(multi_head_sum(x, p), perm)),
            1e-12);
}

TEST(FilterSubspace, SharedWeightsGiveIdenticalAtoms) {
  Rng rng(11);
  AttentionParams p = random_params(3, 4, 2, rng);
  p.wq[1] = p.wq[0];
  p.wk[1] = p.wk[0];
  FilterSubspace fs = filter_subspace(gaussian(5, 3, 1.0, rng), p);
  ASSERT_EQ(fs.heads(), 2u);
  EXPECT_EQ(fs.atoms[0], fs.atoms[1]);
}

TEST(FilterSubspace, AtomsAreRowStochastic) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    AttentionParams p = random_params(5, 8, 4, rng);
    FilterSubspace fs = filter_subspace(gaussian(9, 5, 1.0, rng), p);
    for (const Matrix& atom : fs.atoms) EXPECT_TRUE(is_row_stochastic(atom, 1e-12));
  }
}

TEST(FilterSubspace, ToyInstanceIsReproducible) {
  auto atoms = [] {
    Rng rng(0);
    AttentionParams p = random_attention_params({2, 2, 2}, rng);
    return filter_subspace(build_toy_instance().x, p).atoms;
  };
  EXPECT_EQ(atoms(), atoms());
}

TEST(GraphConv, ZeroWeightsAndIdentityFilter) {
  Rng rng(13);
  Matrix x = gaussian(4, 3, 1.0, rng);
  AttentionParams p = random_params(3, 4, 2, rng);
  FilterSubspace fs = filter_subspace(x, p);
  EXPECT_EQ(graph_conv_forward(x, fs, {Matrix::zeros(3, 4), Matrix::zeros(3, 4)}),
            Matrix::zeros(4, 4));

  FilterSubspace identity{{Matrix::identity(4)}};
  Matrix w = gaussian(3, 5, 1.0, rng);
  EXPECT_EQ(graph_conv_forward(x, identity, {w}), matmul(x, w));
}

TEST(GraphConv, HeadCountMismatchIsArityError) {
  Rng rng(14);
  Matrix x = gaussian(4, 3, 1.0, rng);
  FilterSubspace fs{{Matrix::identity(4), Matrix::identity(4)}};
  EXPECT_THROW(graph_conv_forward(x, fs, {Matrix(3, 2)}), ArityError);
}

TEST(AttentionParamsValidation, RejectsBadShapes) {
  Rng rng(15);
  EXPECT_THROW(random_attention_params({3, 5, 2}, rng), DimensionError);
  AttentionParams p = random_params(3, 4, 2, rng);
  EXPECT_NO_THROW(validate(p));
  p.wv[1] = Matrix(3, 3);
  EXPECT_THROW(validate(p), DimensionError);
}

TEST(AttentionGradients, AllWeightsMatchFiniteDifferences) {
  Rng rng(16);
  const AttentionParams p0 = random_params(3, 4, 2, rng);
  const Matrix x = gaussian(5, 3, 1.0, rng), target = gaussian(5, 4, 1.0, rng);

  Tape tape;
  AttentionVars v = record_parameters(tape, p0);
  Gradients g = backward(mse_loss(multi_head_sum(tape.constant(x), v), tape.constant(target)));

  auto loss_with = [&](auto mutate) {
    return [&, mutate](const Matrix& w) {
      AttentionParams p = p0;
      mutate(p, w);
      return mse_loss(multi_head_sum(x, p), target);
    };
  };
  for (std::size_t h = 0; h < 2; ++h) {
    auto fq = loss_with([h](AttentionParams& p, const Matrix& w) { p.wq[h] = w; });
    auto fk = loss_with([h](AttentionParams& p, const Matrix& w) { p.wk[h] = w; });
    auto fv = loss_with([h](AttentionParams& p, const Matrix& w) { p.wv[h] = w; });
    EXPECT_LT(gradient_mismatch(g[v.wq[h]], finite_difference_grad(fq, p0.wq[h])), 1e-5);
    EXPECT_LT(gradient_mismatch(g[v.wk[h]], finite_difference_grad(fk, p0.wk[h])), 1e-5);
    EXPECT_LT(gradient_mismatch(g[v.wv[h]], finite_difference_grad(fv, p0.wv[h])), 1e-5);
  }
  auto fo = loss_with([](AttentionParams& p, const Matrix& w) { p.wo = w; });
  EXPECT_LT(gradient_mismatch(g[v.wo], finite_difference_grad(fo, p0.wo)), 1e-5);
}

TEST(AttentionGradients, TapeForwardMatchesPlainForward) {
  Rng rng(17);
  const AttentionParams p = random_params(3, 4, 2, rng);
  const Matrix x = gaussian(6, 3, 1.0, rng);
  Tape tape;
  AttentionVars v = record_parameters(tape, p);
  Var xv = tape.constant(x);
  EXPECT_EQ(multi_head_sum(xv, v).value(), multi_head_sum(x, p));
  EXPECT_EQ(multi_head_concat(xv, v).value(), multi_head_concat(x, p));
}
