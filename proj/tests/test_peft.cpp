#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "coefflab/peft.hpp"

using namespace coefflab;

namespace {

BackboneSpec small_spec() {
  BackboneSpec s;
  s.layers = 2;
  s.heads = 2;
  s.dim = 4;
  s.tokens = 5;
  return s;
}

std::vector<double> reference_features(const FrozenBackbone& bb, const Matrix& x,
                                       const std::vector<Matrix>& ap) {
  Matrix cur = x;
  for (std::size_t l = 0; l < bb.layers.size(); ++l) {
    cur = add(cur, coeff_attention_forward(cur, bb.layers[l], ap[l]));
  }
  std::vector<double> f(cur.cols(), 0.0);
  for (std::size_t r = 0; r < cur.rows(); ++r) {
    for (std::size_t c = 0; c < cur.cols(); ++c) f[c] += cur(r, c) / cur.rows();
  }
  return f;
}

TaskSpec small_task() {
  TaskSpec t;
  t.backbone = small_spec();
  t.train_samples = 40;
  t.test_samples = 30;
  return t;
}

}  // namespace

TEST(Backbone, FeaturesMatchGenericCoefficientAttention) {
  Rng rng(1);
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    FrozenBackbone bb = build_backbone(BackboneSpec{}, seed);
    std::vector<Matrix> ap;
    for (std::size_t l = 0; l < 3; ++l) ap.push_back(gaussian(4, 4, 0.7, rng));
    Matrix x = gaussian(12, 16, 1.0, rng);
    std::vector<double> fast = backbone_features(bb, x, ap);
    std::vector<double> ref = reference_features(bb, x, ap);
    for (std::size_t c = 0; c < fast.size(); ++c) EXPECT_NEAR(fast[c], ref[c], 1e-12);
  }
}

TEST(Backbone, AlphaGradientMatchesTape) {
  Rng rng(2);
  FrozenBackbone bb = build_backbone(small_spec(), 5);
  std::vector<Matrix> ap{gaussian(2, 2, 0.7, rng), gaussian(2, 2, 0.7, rng)};
  Matrix x = gaussian(5, 4, 1.0, rng);
  std::vector<double> w{0.3, -1.2, 0.5, 0.9};
  std::vector<Matrix> fast = backbone_alpha_grad(bb, x, ap, w);

  Tape tape;
  std::vector<Var> apv;
  for (const Matrix& a : ap) apv.push_back(tape.parameter(a));
  Var cur = tape.constant(x);
  for (std::size_t l = 0; l < 2; ++l) {
    AttentionVars lv = record_parameters(tape, bb.layers[l]);
    cur = add(cur, coeff_attention_forward(cur, lv, apv[l]));
  }
  Matrix pool(1, 5, 1.0 / 5.0);
  Var feat = matmul(tape.constant(pool), cur);
  Var loss = matmul(feat, tape.constant(Matrix(4, 1, std::vector<double>(w))));
  Gradients g = backward(loss);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_LT(max_abs_diff(fast[l], g[apv[l]]), 1e-12);
}

TEST(Backbone, AlphaGradientMatchesFiniteDifferences) {
  Rng rng(3);
  FrozenBackbone bb = build_backbone(BackboneSpec{}, 7);
  std::vector<Matrix> ap;
  for (std::size_t l = 0; l < 3; ++l) ap.push_back(add(Matrix::identity(4), gaussian(4, 4, 0.3, rng)));
  Matrix x = gaussian(12, 16, 1.0, rng);
  std::vector<double> w(16);
  for (double& v : w) v = std::normal_distribution<double>(0.0, 1.0)(rng);
  std::vector<Matrix> fast = backbone_alpha_grad(bb, x, ap, w);
  for (std::size_t l = 0; l < 3; ++l) {
    auto f = [&](const Matrix& a) {
      std::vector<Matrix> mod = ap;
      mod[l] = a;
      std::vector<double> feat = backbone_features(bb, x, mod);
      return std::inner_product(feat.begin(), feat.end(), w.begin(), 0.0);
    };
    EXPECT_LT(gradient_mismatch(fast[l], finite_difference_grad(f, ap[l])), 1e-5);
  }
}

TEST(Backbone, DeterministicAndValidated) {
  FrozenBackbone a = build_backbone(BackboneSpec{}, 4), b = build_backbone(BackboneSpec{}, 4);
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    EXPECT_EQ(a.layers[l].wq, b.layers[l].wq);
    EXPECT_EQ(a.layers[l].wo, b.layers[l].wo);
  }
  BackboneSpec bad;
  bad.heads = 3;
  EXPECT_THROW(build_backbone(bad, 0), DimensionError);
  std::vector<Matrix> wrong(2, Matrix::identity(4));
  EXPECT_THROW(backbone_features(a, Matrix(12, 16), wrong), ArityError);
  EXPECT_THROW(backbone_features(a, Matrix(11, 16), std::vector<Matrix>(3, Matrix::identity(4))),
               DimensionError);
}

TEST(SyntheticTaskGen, DeterministicBalancedDisjoint) {
  TaskSpec spec = small_task();
  FrozenBackbone bb = build_backbone(spec.backbone, 3);
  SyntheticTask a = generate_task(spec, bb, 3), b = generate_task(spec, bb, 3);
  ASSERT_EQ(a.train.size(), 40u);
  ASSERT_EQ(a.test.size(), 30u);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].x, b.train[i].x);
    EXPECT_EQ(a.train[i].label, b.train[i].label);
  }
  for (const auto* split : {&a.train, &a.test}) {
    std::size_t ones = 0;
    for (const auto& s : *split) ones += s.label;
    EXPECT_EQ(ones * 2, split->size());
  }
  for (const auto& tr : a.train) {
    for (const auto& te : a.test) EXPECT_NE(tr.x, te.x);
  }
}

TEST(SyntheticTaskGen, ConvenienceOverloadBalances) {
  SyntheticTask t = generate_task(0, 12, 16, 2, 200);
  std::size_t ones = 0;
  for (const auto& s : t.train) ones += s.label;
  EXPECT_EQ(t.train.size(), 200u);
  EXPECT_EQ(ones, 100u);
  std::size_t test_ones = 0;
  for (const auto& s : t.test) test_ones += s.label;
  const double majority = std::max(test_ones, t.test.size() - test_ones) / double(t.test.size());
  EXPECT_NEAR(majority, 0.5, 0.05);
  EXPECT_THROW(generate_task(0, 12, 16, 3, 2), UsageError);
}

TEST(SyntheticTaskGen, ThreeClassesBalancedWithinOne) {
  TaskSpec spec = small_task();
  spec.classes = 3;
  spec.train_samples = 31;
  FrozenBackbone bb = build_backbone(spec.backbone, 1);
  SyntheticTask t = generate_task(spec, bb, 1);
  std::vector<std::size_t> counts(3);
  for (const auto& s : t.train) ++counts[s.label];
  EXPECT_LE(*std::max_element(counts.begin(), counts.end()) -
                *std::min_element(counts.begin(), counts.end()),
            1u);
}

TEST(Tune, FrozenResidualAlphaEqualsLinearProbeBitForBit) {
  TaskSpec spec = small_task();
  FrozenBackbone bb = build_backbone(spec.backbone, 2);
  SyntheticTask task = generate_task(spec, bb, 2);
  TuneConfig probe;
  probe.mode = TuneMode::LinearProbe;
  probe.steps = 60;
  TuneConfig frozen = probe;
  frozen.mode = TuneMode::AlphaResidual;
  frozen.freeze_alpha = true;
  for (std::size_t batch : {0, 16}) {
    probe.batch_size = frozen.batch_size = batch;
    for (double p : {0.0, 0.3}) {
      frozen.dropout_p = p;
      TuneMetrics a = tune(bb, task, probe), b = tune(bb, task, frozen);
      EXPECT_EQ(a.train_loss, b.train_loss);
      EXPECT_EQ(a.train_acc, b.train_acc);
      EXPECT_EQ(a.test_loss, b.test_loss);
      EXPECT_EQ(a.test_acc, b.test_acc);
    }
  }
}

TEST(Tune, MinibatchCoveringTheSplitIsFullBatch) {
  TaskSpec spec = small_task();
  FrozenBackbone bb = build_backbone(spec.backbone, 3);
  SyntheticTask task = generate_task(spec, bb, 3);
  TuneConfig full;
  full.steps = 20;
  TuneConfig whole = full;
  whole.batch_size = task.train.size() + 5;
  TuneConfig mini = full;
  mini.batch_size = 8;
  TuneMetrics a = tune(bb, task, full), b = tune(bb, task, whole), c = tune(bb, task, mini);
  EXPECT_EQ(a.train_loss, b.train_loss);
  EXPECT_EQ(a.alpha[0], b.alpha[0]);
  EXPECT_NE(a.alpha[0], c.alpha[0]);
}

TEST(Tune, ZeroDropoutMatchesDisabledDropoutBitForBit) {
  TaskSpec spec = small_task();
  FrozenBackbone bb = build_backbone(spec.backbone, 2);
  SyntheticTask task = generate_task(spec, bb, 2);
  for (TuneMode m : {TuneMode::AlphaResidual, TuneMode::AlphaDirectRandom}) {
    TuneConfig with;
    with.mode = m;
    with.steps = 40;
    with.batch_size = 16;
    TuneConfig without = with;
    without.dropout_enabled = false;
    TuneMetrics a = tune(bb, task, with), b = tune(bb, task, without);
    EXPECT_EQ(a.train_loss, b.train_loss);
    EXPECT_EQ(a.test_acc, b.test_acc);
    for (std::size_t l = 0; l < a.alpha.size(); ++l) EXPECT_EQ(a.alpha[l], b.alpha[l]);
  }
}

TEST(Tune, TrainableParameterBudget) {
  TaskSpec spec = small_task();
  FrozenBackbone bb = build_backbone(spec.backbone, 0);
  SyntheticTask task = generate_task(spec, bb, 0);
  TuneConfig cfg;
  cfg.steps = 2;
  const std::size_t head = 4 * 2 + 2;
  cfg.mode = TuneMode::LinearProbe;
  EXPECT_EQ(tune(bb, task, cfg).trainable_params, head);
  cfg.mode = TuneMode::AlphaResidual;
  TuneMetrics m = tune(bb, task, cfg);
  EXPECT_EQ(m.trainable_params, head + count_coeff_params(2, 2));
  std::size_t alpha_entries = 0;
  for (const Matrix& a : m.alpha) alpha_entries += a.size();
  EXPECT_EQ(alpha_entries, count_coeff_params(2, 2));
}

TEST(Tune, AlphaLearnsAndIsDeterministic) {
  TaskSpec spec = small_task();
  FrozenBackbone bb = build_backbone(spec.backbone, 1);
  SyntheticTask task = generate_task(spec, bb, 1);
  TuneConfig cfg;
  cfg.steps = 50;
  cfg.dropout_p = 0.2;
  TuneMetrics a = tune(bb, task, cfg), b = tune(bb, task, cfg);
  EXPECT_EQ(a.train_loss, b.train_loss);
  EXPECT_GT(max_abs(a.alpha[0]), 0.0);
  cfg.mode = TuneMode::LinearProbe;
  TuneMetrics probe = tune(bb, task, cfg);
  EXPECT_LT(a.train_loss, probe.train_loss);
}

TEST(Tune, Validation) {
  TaskSpec spec = small_task();
  FrozenBackbone bb = build_backbone(spec.backbone, 0);
  SyntheticTask task = generate_task(spec, bb, 0);
  TuneConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(tune(bb, task, cfg), UsageError);
  cfg.steps = 1;
  cfg.dropout_p = 1.5;
  EXPECT_THROW(tune(bb, task, cfg), UsageError);
  EXPECT_THROW(parse_tune_mode("full-finetune"), UsageError);
  for (TuneMode m : kAllTuneModes) EXPECT_EQ(parse_tune_mode(to_string(m)), m);
}

TEST(AblationGrid, ShapeAndOrderingBookkeeping) {
  AblationConfig cfg;
  cfg.task = small_task();
  cfg.steps = 5;
  AblationReport rep = run_ablation_grid({0, 1, 2}, cfg, 1);
  EXPECT_EQ(rep.rows.size(), 48u);
  for (TuneMode m : kAllTuneModes) {
    for (double p : cfg.dropout_rates) EXPECT_NE(rep.find(m, p, 1), nullptr);
  }
  EXPECT_EQ(rep.find(TuneMode::LinearProbe, 0.0, 2)->test_acc,
            rep.find(TuneMode::LinearProbe, 0.4, 2)->test_acc);
  ASSERT_EQ(rep.checks.size(), 4u);
  EXPECT_EQ(rep.checks[0].required, 3u);
  EXPECT_EQ(rep.checks[1].required, 2u);
  EXPECT_TRUE(rep.checks[0].gating && rep.checks[1].gating);
  EXPECT_FALSE(rep.checks[2].gating || rep.checks[3].gating);
}

TEST(AblationGrid, OrderingEvaluation) {
  std::vector<AblationRow> rows;
  auto add_row = [&](TuneMode m, double p, std::uint64_t s, double acc) {
    rows.push_back({m, p, s, 0.0, acc});
  };
  for (std::uint64_t s : {0u, 1u, 2u}) {
    add_row(TuneMode::LinearProbe, 0.0, s, 0.6);
    add_row(TuneMode::AlphaResidual, 0.0, s, 0.8);
    add_row(TuneMode::AlphaDirectRandom, 0.0, s, s == 0 ? 0.9 : 0.7);
  }
  auto checks = evaluate_orderings(rows);
  ASSERT_EQ(checks.size(), 2u);
  EXPECT_EQ(checks[0].holds, 3u);
  EXPECT_TRUE(checks[0].pass());
  EXPECT_EQ(checks[1].holds, 2u);
  EXPECT_TRUE(checks[1].pass());
  rows[1].test_acc = 0.5;
  EXPECT_FALSE(evaluate_orderings(rows)[0].pass());
}
