#include "wim/num/optim.hpp"

#include <cmath>

namespace wim::num {

Optimizer::Optimizer(OptimizerConfig config, std::vector<Parameter*> params)
    : config_(config), params_(std::move(params)) {
  first_moment_.reserve(params_.size());
  second_moment_.reserve(params_.size());
  for (Parameter* p : params_) {
    first_moment_.emplace_back(p->value.shape());
    second_moment_.emplace_back(p->value.shape());
    if (p->grad.shape() != p->value.shape()) p->zero_grad();
  }
}

void Optimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Optimizer::step() {
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = config_.learning_rate;
  const double decay = config_.kind == OptimizerKind::adamw ? lr * config_.weight_decay : 0.0;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = first_moment_[k].data();
    double* v = second_moment_[k].data();
    if (config_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0, n = p.value.size(); i < n; ++i) {
        m[i] = b1 * m[i] + g[i];
        w[i] -= lr * m[i];
      }
      p.value.check_finite(p.name.c_str());
      continue;
    }
    for (std::size_t i = 0, n = p.value.size(); i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bias1;
      const double vhat = v[i] / bias2;
      w[i] -= decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
    p.value.check_finite(p.name.c_str());
  }
}

}  // namespace wim::num
