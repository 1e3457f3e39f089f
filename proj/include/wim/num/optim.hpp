#pragma once

#include <cstdint>
#include <vector>

#include "wim/num/autodiff.hpp"

namespace wim::num {

enum class OptimizerKind { adam, adamw, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Decoupled decay; only applied for AdamW.
  double weight_decay = 0.01;

  static OptimizerConfig adam(double lr) { return {OptimizerKind::adam, lr, 0.9, 0.999, 1e-8, 0.0}; }
  static OptimizerConfig adamw(double lr) { return {OptimizerKind::adamw, lr, 0.9, 0.999, 1e-8, 0.01}; }
  // Heavy-ball momentum with coefficient beta1.
  static OptimizerConfig sgd(double lr, double momentum = 0.9) {
    return {OptimizerKind::sgd, lr, momentum, 0.0, 0.0, 0.0};
  }
};

class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<Parameter*> params);

  void zero_grad();
  // Applies one update from the accumulated gradients. Throws NumericError if
  // any parameter becomes non-finite.
  void step();

  std::uint64_t steps() const noexcept { return step_; }
  const OptimizerConfig& config() const noexcept { return config_; }
  const std::vector<Parameter*>& parameters() const noexcept { return params_; }

 private:
  OptimizerConfig config_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
  std::uint64_t step_ = 0;
};

}  // namespace wim::num
