#include "coefflab/adam.hpp"

#include <cmath>

namespace coefflab {

namespace {

void check_arity(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) {
    throw ArityError("optimizer got " + std::to_string(params.size()) + " params and " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i])) {
      throw DimensionError("gradient " + grads[i].shape() + " for param " + params[i]->shape());
    }
  }
}

}  // namespace

void Adam::step(std::vector<Matrix*> params, const std::vector<Matrix>& grads) {
  check_arity(params, grads);
  if (t_ == 0) {
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  } else if (params.size() != m_.size()) {
    throw ArityError("optimizer param list changed between steps");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!m_[i].same_shape(*params[i])) throw DimensionError("optimizer param shape changed");
    auto p = params[i]->data();
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      p[k] -= cfg_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

void sgd_step(std::vector<Matrix*> params, const std::vector<Matrix>& grads, double lr) {
  check_arity(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
}

}  // namespace coefflab
