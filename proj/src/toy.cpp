#include "coefflab/toy.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "coefflab/adam.hpp"
#include "coefflab/attention.hpp"
#include "coefflab/coeff.hpp"
#include "coefflab/random.hpp"

namespace coefflab {

ToyInstance build_toy_instance() {
  return {Matrix{{-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}, {-1, 0}},
          Matrix{{-1, 1}, {0, 2}, {1, 1}, {2, 0}, {1, -1}, {0, -2}, {-1, -1}, {-2, 0}}};
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::QkOnly: return "qk-only";
    case Regime::Qkv: return "qkv";
    case Regime::QkPlusAlpha: return "qk-plus-alpha";
  }
  return "?";
}

Regime parse_regime(std::string_view name) {
  for (Regime r : {Regime::QkOnly, Regime::Qkv, Regime::QkPlusAlpha}) {
    if (name == to_string(r)) return r;
  }
  throw UsageError("unknown regime '" + std::string(name) + "'");
}

std::string to_string(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

Optimizer parse_optimizer(std::string_view name) {
  if (name == "adam") return Optimizer::Adam;
  if (name == "sgd") return Optimizer::Sgd;
  throw UsageError("unknown optimizer '" + std::string(name) + "'");
}

std::string to_string(ValueInit v) { return v == ValueInit::Identity ? "identity" : "gaussian"; }

ValueInit parse_value_init(std::string_view name) {
  if (name == "identity") return ValueInit::Identity;
  if (name == "gaussian") return ValueInit::Gaussian;
  throw UsageError("unknown value init '" + std::string(name) + "'");
}

void validate(const TrainConfig& cfg) {
  if (cfg.steps < 1) throw UsageError("steps must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw UsageError("learning rate must be > 0");
  if (cfg.heads < 1 || 2 % cfg.heads != 0) {
    throw UsageError("toy heads must divide the coordinate dimension 2");
  }
  if (!(cfg.init_std > 0.0)) throw UsageError("init std must be > 0");
}

namespace {

AttentionParams init_toy_params(const TrainConfig& cfg, Rng& rng) {
  const std::size_t dim = 2, d = dim / cfg.heads;
  AttentionParams p;
  p.heads = cfg.heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) p.wq.push_back(gaussian(dim, d, cfg.init_std, rng));
  for (std::size_t h = 0; h < cfg.heads; ++h) p.wk.push_back(gaussian(dim, d, cfg.init_std, rng));
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    if (cfg.value_init == ValueInit::Identity) {
      Matrix v(dim, d);
      for (std::size_t j = 0; j < d; ++j) v(h * d + j, j) = 1.0;
      p.wv.push_back(std::move(v));
    } else {
      p.wv.push_back(gaussian(dim, d, cfg.init_std, rng));
    }
  }
  p.wo = Matrix::identity(dim);
  return p;
}

double peak_abs(const Matrix& m) { return max_abs(m); }

}  // namespace

TrainResult train_toy(const ToyInstance& inst, const TrainConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  AttentionParams p = init_toy_params(cfg, rng);
  Matrix alpha(cfg.heads, cfg.heads);
  const bool uses_alpha = cfg.regime == Regime::QkPlusAlpha;
  const bool trains_value =
      cfg.regime == Regime::Qkv || (uses_alpha && cfg.alpha_trains_value);

  std::vector<Matrix*> trainable;
  for (auto& w : p.wq) trainable.push_back(&w);
  for (auto& w : p.wk) trainable.push_back(&w);
  if (trains_value) {
    for (auto& w : p.wv) trainable.push_back(&w);
  }
  if (uses_alpha) trainable.push_back(&alpha);

  Adam adam(AdamConfig{cfg.learning_rate});
  SubspaceCoefficient coeff;
  coeff.mode = CoeffMode::ResidualZeroInit;
  coeff.dropout_enabled = false;

  TrainResult res;
  res.regime = cfg.regime;
  res.loss_curve.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    try {
      Tape tape;
      AttentionVars v = record_parameters(tape, p);
      Var x = tape.constant(inst.x);
      Var out;
      Var alpha_var;
      if (uses_alpha) {
        alpha_var = tape.parameter(alpha);
        coeff.alpha = alpha;
        out = coeff_attention_forward(x, v, effective_coefficient(alpha_var, coeff, false, rng));
      } else {
        out = multi_head_sum(x, v);
      }
      Var loss = mse_loss(out, tape.constant(inst.target));
      const double l = loss.value()(0, 0);
      if (!std::isfinite(l)) throw TrainingError(step, "non-finite loss");
      res.loss_curve.push_back(l);
      res.peak_abs_coordinate = std::max(res.peak_abs_coordinate, peak_abs(out.value()));

      Gradients g = backward(loss);
      std::vector<Matrix> grads;
      for (const auto& w : v.wq) grads.push_back(g[w]);
      for (const auto& w : v.wk) grads.push_back(g[w]);
      if (trains_value) {
        for (const auto& w : v.wv) grads.push_back(g[w]);
      }
      if (uses_alpha) grads.push_back(g[alpha_var]);
      for (const Matrix& gr : grads) {
        if (!all_finite(gr)) throw TrainingError(step, "non-finite gradient");
      }
      if (cfg.optimizer == Optimizer::Adam) {
        adam.step(trainable, grads);
      } else {
        sgd_step(trainable, grads, cfg.learning_rate);
      }
    } catch (const TrainingError&) {
      throw;
    } catch (const NumericError& e) {
      throw TrainingError(step, e.what());
    }
  }

  res.final_output = uses_alpha
                         ? coeff_attention_forward(inst.x, p, add(alpha, Matrix::identity(cfg.heads)))
                         : multi_head_sum(inst.x, p);
  if (!all_finite(res.final_output)) throw TrainingError(cfg.steps, "non-finite output");
  res.final_mse = mse_loss(res.final_output, inst.target);
  res.peak_abs_coordinate = std::max(res.peak_abs_coordinate, peak_abs(res.final_output));
  for (std::size_t r = 0; r < res.final_output.rows(); ++r) {
    double row_max = 0.0;
    for (double c : res.final_output.row(r)) row_max = std::max(row_max, std::abs(c));
    res.max_output_radius = std::max(res.max_output_radius, row_max);
  }
  return res;
}

const TrainResult& RegimeComparison::get(Regime r) const {
  for (const auto& res : results) {
    if (res.regime == r) return res;
  }
  throw UsageError("regime " + to_string(r) + " not in comparison");
}

RegimeComparison run_regime_comparison(const ToyInstance& inst, const TrainConfig& cfg_base,
                                       int jobs) {
  const Regime order[] = {Regime::QkOnly, Regime::Qkv, Regime::QkPlusAlpha};
  RegimeComparison cmp;
  cmp.results.resize(3);
  std::vector<std::exception_ptr> errors(3);
#pragma omp parallel for num_threads(std::max(1, std::min(jobs, 3))) schedule(static, 1)
  for (int i = 0; i < 3; ++i) {
    try {
      TrainConfig cfg = cfg_base;
      cfg.regime = order[i];
      cmp.results[i] = train_toy(inst, cfg);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  const double a = cmp.results[2].final_mse;
  cmp.ordering_holds = a < kToyTargetMse && cmp.results[0].final_mse >= kToyGapFactor * a &&
                       cmp.results[1].final_mse >= kToyGapFactor * a;
  return cmp;
}

}  // namespace coefflab
