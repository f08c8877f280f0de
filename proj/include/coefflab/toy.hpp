#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "coefflab/matrix.hpp"

namespace coefflab {

/// Eight-node input graph on the square [-1,1]^2 and its target, where the
/// edge midpoints are pushed out to distance 2.
struct ToyInstance {
  Matrix x;
  Matrix target;
};

ToyInstance build_toy_instance();

enum class Regime { QkOnly, Qkv, QkPlusAlpha };
enum class Optimizer { Sgd, Adam };
// Identity: W_v^h selects coordinate block h and W_o = I, so the value path
// is an identity-like embedding. Gaussian: W_v^h ~ N(0, init_std^2).
enum class ValueInit { Identity, Gaussian };

std::string to_string(Regime r);
Regime parse_regime(std::string_view name);
std::string to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view name);
std::string to_string(ValueInit v);
ValueInit parse_value_init(std::string_view name);

struct TrainConfig {
  Regime regime = Regime::QkPlusAlpha;
  std::size_t heads = 2;
  std::size_t steps = 5000;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::Adam;
  ValueInit value_init = ValueInit::Identity;
  double init_std = 0.02;
  // Regime qk-plus-alpha also updates W_v when set.
  bool alpha_trains_value = false;
};

void validate(const TrainConfig& cfg);

struct TrainResult {
  Regime regime = Regime::QkOnly;
  double final_mse = 0.0;
  std::vector<double> loss_curve;  // loss before each update
  Matrix final_output;
  double max_output_radius = 0.0;    // max row L-inf norm of final_output
  double peak_abs_coordinate = 0.0;  // max |coordinate| over every step and the final output
};

class TrainingError : public NumericError {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : NumericError("training diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

TrainResult train_toy(const ToyInstance& inst, const TrainConfig& cfg);

inline constexpr double kToyTargetMse = 1e-3;
inline constexpr double kToyGapFactor = 10.0;

struct RegimeComparison {
  std::vector<TrainResult> results;  // qk-only, qkv, qk-plus-alpha
  // qk-plus-alpha below kToyTargetMse and both others at least kToyGapFactor times higher.
  bool ordering_holds = false;
  const TrainResult& get(Regime r) const;
};

/// Runs all three regimes with cfg_base's seed and budget.
RegimeComparison run_regime_comparison(const ToyInstance& inst, const TrainConfig& cfg_base,
                                       int jobs = 1);

}  // namespace coefflab
