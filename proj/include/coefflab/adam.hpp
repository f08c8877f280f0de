#pragma once

#include <cstddef>
#include <vector>

#include "coefflab/matrix.hpp"

namespace coefflab {

struct AdamConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of parameter matrices. Shapes are captured on the
/// first step and checked on every later step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<Matrix*> params, const std::vector<Matrix>& grads);
  std::size_t steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Plain gradient descent, same calling convention as Adam.
void sgd_step(std::vector<Matrix*> params, const std::vector<Matrix>& grads, double lr);

}  // namespace coefflab
