#pragma once

#include <cstddef>
#include <vector>

#include "dtr/nn.hpp"
#include "dtr/tensor.hpp"

namespace dtr {

// Learning-rate multiplier as a function of the 1-based update count.
struct LrSchedule {
  enum class Kind { kConstant, kLinearWarmup };

  Kind kind = Kind::kLinearWarmup;
  std::size_t warmup_steps = 10000;

  // kLinearWarmup: min(1, step / warmup_steps), then constant.
  double Factor(std::size_t step) const;

  static LrSchedule Constant() { return {Kind::kConstant, 0}; }
};

struct AdamOptions {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  LrSchedule schedule;
};

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
  double learning_rate = 0.0;  // rate used by the most recent update
  double weight_decay = 0.0;
  LrSchedule schedule;
};

// Adam with decoupled weight decay:
//   p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
class Adam {
 public:
  Adam(ParameterList params, const AdamOptions& options);

  // Applies one update from `grads`. Parameters absent from `grads` see a
  // zero gradient. Throws NumericalError naming the first parameter whose
  // gradient is not finite; no parameter is modified in that case.
  void Step(const Gradients& grads);

  const OptimizerState& state() const { return state_; }
  const ParameterList& parameters() const { return params_; }

 private:
  ParameterList params_;
  AdamOptions options_;
  OptimizerState state_;
};

}  // namespace dtr
