#include "dtr/optim.hpp"

#include <algorithm>
#include <cmath>

#include "dtr/errors.hpp"

namespace dtr {

double LrSchedule::Factor(std::size_t step) const {
  if (kind == Kind::kConstant || warmup_steps == 0) return 1.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
}

Adam::Adam(ParameterList params, const AdamOptions& options)
    : params_(std::move(params)), options_(options) {
  state_.weight_decay = options.weight_decay;
  state_.schedule = options.schedule;
  for (const auto& p : params_) {
    state_.first_moment.emplace_back(p.tensor.size(), 0.0);
    state_.second_moment.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::Step(const Gradients& grads) {
  for (const auto& p : params_) {
    for (double g : grads.Find(p.tensor)) {
      if (!std::isfinite(g)) {
        throw NumericalError("non-finite gradient for parameter " + p.name);
      }
    }
  }
  ++state_.step;
  double lr = options_.learning_rate * options_.schedule.Factor(state_.step);
  state_.learning_rate = lr;
  double t = static_cast<double>(state_.step);
  double bias1 = 1.0 - std::pow(options_.beta1, t);
  double bias2 = 1.0 - std::pow(options_.beta2, t);
  double decay = 1.0 - lr * options_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto values = params_[i].tensor.mutable_data();
    auto grad = grads.Find(params_[i].tensor);
    auto& m = state_.first_moment[i];
    auto& v = state_.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      double g = grad.empty() ? 0.0 : grad[j];
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g;
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g * g;
      double m_hat = m[j] / bias1;
      double v_hat = v[j] / bias2;
      values[j] = values[j] * decay - lr * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
  }
}

}  // namespace dtr
