#include "coefflab/checks.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "coefflab/random.hpp"

namespace coefflab {

namespace {

constexpr std::uint64_t kEquivalenceStream = 31;
constexpr std::uint64_t kGradientStream = 32;

double frobenius(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return std::sqrt(s);
}

template <class Fn>
BoundedReport run(std::size_t trials, Fn&& fn) {
  if (trials == 0) throw UsageError("trial count must be >= 1");
  BoundedReport report;
  report.trials = trials;
  report.rows.resize(trials);
  const auto n = static_cast<std::int64_t>(trials);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t t = 0; t < n; ++t) {
    const auto idx = static_cast<std::size_t>(t);
    try {
      report.rows[idx] = fn(idx);
    } catch (const std::exception&) {
      report.rows[idx] = TrialVerdict{idx, false, true, 0.0};
    }
  }
  for (const TrialVerdict& v : report.rows) {
    if (v.pass) ++report.passes;
    if (v.inconclusive) ++report.inconclusive;
    report.max_slack = std::max(report.max_slack, v.slack);
  }
  return report;
}

}  // namespace

double relative_gradient_error(const Matrix& analytic, const Matrix& numeric, double floor) {
  if (!analytic.same_shape(numeric)) {
    throw DimensionError("relative_gradient_error: shapes " + analytic.shape() + " vs " +
                         numeric.shape());
  }
  const double diff = frobenius(subtract(analytic, numeric));
  const double mag = std::max(frobenius(analytic), frobenius(numeric));
  return mag < floor ? diff : diff / mag;
}

BoundedReport verify_three_form_equivalence(std::size_t trials, std::uint64_t seed) {
  return run(trials, [seed](std::size_t t) {
    Rng rng(derive_seed(seed, kEquivalenceStream, t));
    const std::size_t head_choices[] = {1, 2, 4};
    const std::size_t heads = head_choices[std::uniform_int_distribution<int>(0, 2)(rng)];
    const std::size_t tokens = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
    const std::size_t in_dim = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    const std::size_t out_dim = heads * std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    const AttentionParams p = random_attention_params({in_dim, out_dim, heads}, rng, 0.5);
    const Matrix x = gaussian(tokens, in_dim, 1.0, rng);
    const Matrix concat = multi_head_concat(x, p);
    const Matrix sum = multi_head_sum(x, p);
    const Matrix conv = graph_conv_forward(x, filter_subspace(x, p), head_weights(p));
    const double dev = std::max(
        {max_abs_diff(concat, sum), max_abs_diff(sum, conv), max_abs_diff(concat, conv)});
    return TrialVerdict{t, dev < kEquivalenceTol, false, dev};
  });
}

BoundedReport verify_gradients(std::size_t trials, std::uint64_t seed) {
  return run(trials, [seed](std::size_t t) {
    Rng rng(derive_seed(seed, kGradientStream, t));
    const int variant = static_cast<int>(t % 3);
    const std::size_t heads =
        variant == 0 ? 1 : std::uniform_int_distribution<std::size_t>(2, 3)(rng);
    const std::size_t tokens = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
    const std::size_t in_dim = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
    const std::size_t out_dim = heads * std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    const AttentionParams p0 = random_attention_params({in_dim, out_dim, heads}, rng, 0.5);
    const Matrix alpha0 = gaussian(heads, heads, 0.3, rng);
    const Matrix x = gaussian(tokens, in_dim, 1.0, rng);
    const Matrix target = gaussian(tokens, out_dim, 1.0, rng);
    const Matrix eye = Matrix::identity(heads);

    auto loss_plain = [&](const AttentionParams& p, const Matrix& alpha) {
      switch (variant) {
        case 0: return mse_loss(single_head_attention(x, p.wq[0], p.wk[0], p.wv[0]), target);
        case 1: return mse_loss(multi_head_sum(x, p), target);
        default: return mse_loss(coeff_attention_forward(x, p, add(alpha, eye)), target);
      }
    };

    Tape tape;
    AttentionVars v = record_parameters(tape, p0);
    Var alpha = tape.parameter(alpha0);
    Var xv = tape.constant(x), tv = tape.constant(target);
    Var out;
    switch (variant) {
      case 0: out = single_head_attention(xv, v.wq[0], v.wk[0], v.wv[0]); break;
      case 1: out = multi_head_sum(xv, v); break;
      default: out = coeff_attention_forward(xv, v, add(alpha, tape.constant(eye)));
    }
    Gradients g = backward(mse_loss(out, tv));

    AttentionParams scratch = p0;
    Matrix alpha_scratch = alpha0;
    auto check = [&](Matrix& slot, const Matrix& analytic) {
      const Matrix original = slot;
      auto f = [&](const Matrix& w) {
        slot = w;
        return loss_plain(scratch, alpha_scratch);
      };
      const Matrix numeric = finite_difference_grad(f, original);
      slot = original;
      return relative_gradient_error(analytic, numeric);
    };
    double worst = 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
      worst = std::max(worst, check(scratch.wq[h], g[v.wq[h]]));
      worst = std::max(worst, check(scratch.wk[h], g[v.wk[h]]));
      worst = std::max(worst, check(scratch.wv[h], g[v.wv[h]]));
    }
    if (variant > 0) worst = std::max(worst, check(scratch.wo, g[v.wo]));
    if (variant == 2) worst = std::max(worst, check(alpha_scratch, g[alpha]));
    return TrialVerdict{t, worst < kGradientTol, false, worst};
  });
}

}  // namespace coefflab
