#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "protoosr/tensor.hpp"

namespace protoosr {

/// Step schedule: lr(epoch) = initial_lr * decay_factor^floor(epoch / step_every).
struct LrSchedule {
  double initial_lr = 0.1;
  double decay_factor = 0.1;
  std::size_t step_every = 30;
  std::size_t total_epochs = 100;

  void validate() const;
};

double lr_at(const LrSchedule& schedule, std::size_t epoch);

/// SGD with momentum. The velocity accumulates raw gradients:
///   v <- momentum * v + (g + weight_decay * p)
///   p <- p - lr * v
struct OptimState {
  std::vector<Tensor<float>> velocity;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// Zero velocities shaped like `params`.
OptimState make_optim_state(std::span<Tensor<float>* const> params, double learning_rate, double momentum,
                            double weight_decay);

/// Rescales all grads together so that their joint L2 norm is at most
/// max_norm. Returns the norm before rescaling.
double clip_grad_norm(std::span<Tensor<float>* const> params, double max_norm);

/// Updates every parameter from its grad buffer, then clears the grads.
void sgd_momentum_step(OptimState& state, std::span<Tensor<float>* const> params);

}  // namespace protoosr
