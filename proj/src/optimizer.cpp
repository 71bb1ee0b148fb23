#include "protoosr/optimizer.hpp"

#include <cmath>
#include <string>

namespace protoosr {

void LrSchedule::validate() const {
  if (!(initial_lr > 0.0)) throw UsageError("initial learning rate must be positive");
  if (!(decay_factor > 0.0)) throw UsageError("decay factor must be positive");
  if (step_every == 0) throw UsageError("step_every must be at least 1");
  if (total_epochs == 0) throw UsageError("total_epochs must be at least 1");
}

double lr_at(const LrSchedule& schedule, std::size_t epoch) {
  schedule.validate();
  if (epoch >= schedule.total_epochs) {
    throw UsageError("epoch " + std::to_string(epoch) + " outside schedule of " +
                     std::to_string(schedule.total_epochs) + " epochs");
  }
  const auto steps = static_cast<int>(epoch / schedule.step_every);
  return schedule.initial_lr * std::pow(schedule.decay_factor, steps);
}

OptimState make_optim_state(std::span<Tensor<float>* const> params, double learning_rate, double momentum,
                            double weight_decay) {
  OptimState state;
  state.learning_rate = learning_rate;
  state.momentum = momentum;
  state.weight_decay = weight_decay;
  for (const auto* p : params) state.velocity.emplace_back(p->shape());
  return state;
}

double clip_grad_norm(std::span<Tensor<float>* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw UsageError("clip norm must be positive");
  double sq = 0.0;
  for (const auto* p : params) {
    if (!p->requires_grad()) continue;
    for (float g : p->grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto factor = static_cast<float>(max_norm / norm);
    for (auto* p : params) {
      if (!p->requires_grad()) continue;
      for (auto& g : p->grad()) g *= factor;
    }
  }
  return norm;
}

void sgd_momentum_step(OptimState& state, std::span<Tensor<float>* const> params) {
  if (state.velocity.size() != params.size()) {
    throw UsageError("optimizer holds " + std::to_string(state.velocity.size()) + " velocity buffers for " +
                     std::to_string(params.size()) + " parameters");
  }
  const auto lr = static_cast<float>(state.learning_rate);
  const auto mu = static_cast<float>(state.momentum);
  const auto wd = static_cast<float>(state.weight_decay);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = *params[t];
    auto& v = state.velocity[t];
    if (!p.requires_grad() || p.grad().size() != p.size()) {
      throw UsageError("parameter " + std::to_string(t) + " has no gradient");
    }
    if (v.shape() != p.shape()) {
      throw DimensionError("velocity " + shape_str(v.shape()) + " does not mirror parameter " + shape_str(p.shape()));
    }
    auto g = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] + (g[i] + wd * p[i]);
      p[i] -= lr * v[i];
    }
    p.zero_grad();
  }
}

}  // namespace protoosr
