#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "protoosr/tensor.hpp"

// Reverse-mode differentiation over dense tensors.
//
// A Tape records every executed operation together with a closure that
// propagates adjoints from the operation's output into its inputs. backprop()
// replays those closures in exact reverse order. Parameters enter the tape by
// reference, so their gradients accumulate directly into the caller's tensors.

namespace protoosr::ad {

template <typename T>
class Tape;

/// Handle to a tensor taking part in a recorded computation.
template <typename T>
class Var {
 public:
  Var() = default;

  Tensor<T>& tensor() const { return *node_; }
  const Shape& shape() const { return node_->shape(); }
  std::size_t dim(std::size_t axis) const { return node_->dim(axis); }
  std::span<const T> values() const { return node_->values(); }
  bool requires_grad() const { return node_->requires_grad(); }
  explicit operator bool() const noexcept { return node_ != nullptr; }

 private:
  friend class Tape<T>;
  explicit Var(Tensor<T>* node) : node_(node) {}
  Tensor<T>* node_ = nullptr;
};

template <typename T>
class Tape {
 public:
  /// With recording off the tape only evaluates values; nothing is kept for
  /// the backward pass.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }

  /// Leaf bound to an external tensor which must outlive the tape.
  Var<T> param(Tensor<T>& t) { return Var<T>(&t); }

  /// Leaf owned by the tape, never differentiated.
  Var<T> constant(Tensor<T> value);

  /// Registers the output of an operation. It gets a grad buffer when any of
  /// its inputs needs one and the tape is recording.
  Var<T> emit(Tensor<T> value, bool needs_grad);

  /// Adds an adjoint closure. Ignored when the tape is not recording.
  void record(std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure newest first.
  /// A tape can be replayed once.
  void backprop(Var<T> loss);

  std::size_t op_count() const noexcept { return backward_.size(); }

 private:
  std::deque<Tensor<T>> owned_;
  std::vector<std::function<void()>> backward_;
  bool recording_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Operations

/// out[b,o] = sum_i input[b,i] * weight[o,i] + bias[o]
template <typename T>
Var<T> linear(Tape<T>& tape, Var<T> input, Var<T> weight, Var<T> bias);

/// Cross-correlation of a B x C x H x W input with an F x C x Kh x Kw kernel.
template <typename T>
Var<T> conv2d(Tape<T>& tape, Var<T> input, Var<T> kernel, std::size_t stride, std::size_t padding);

/// Parametric ReLU. `slope` holds one value per channel (axis 1, or axis 0 for
/// rank-1 input) or a single shared value.
template <typename T>
Var<T> prelu(Tape<T>& tape, Var<T> input, Var<T> slope);

/// Window maximum over the two trailing axes. Ties go to the lowest linear
/// index, which also receives the whole gradient.
template <typename T>
Var<T> maxpool2d(Tape<T>& tape, Var<T> input, std::size_t window, std::size_t stride);

/// Per-channel batch normalization of a B x C x H x W input followed by the
/// affine map gamma * x + beta. In training mode the batch statistics are used
/// and the running estimates are updated by exponential averaging (unbiased
/// variance); otherwise the running estimates are used as constants.
template <typename T>
Var<T> batchnorm2d(Tape<T>& tape, Var<T> input, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                   Tensor<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5));

template <typename T>
Var<T> reshape(Tape<T>& tape, Var<T> input, Shape shape);

template <typename T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b);

template <typename T>
Var<T> mul(Tape<T>& tape, Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Tape<T>& tape, Var<T> a, T factor);

/// Sum of all elements, rank-0 result.
template <typename T>
Var<T> sum(Tape<T>& tape, Var<T> a);

/// Elementwise sqrt(x + eps).
template <typename T>
Var<T> sqrt_eps(Tape<T>& tape, Var<T> a, T eps);

/// sum_k weights[k] * terms[k] over rank-0 terms.
template <typename T>
Var<T> weighted_sum(Tape<T>& tape, std::span<const Var<T>> terms, std::span<const T> weights);

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckOptions {
  double eps = 1e-5;
  /// Upper bound on checked elements per parameter tensor; 0 checks all of
  /// them. When bounded, the subset is drawn without replacement from `seed`.
  std::size_t max_elements_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Also form one-sided differences on each half-interval and score every
  /// element by the closest of the three estimates. For piecewise-smooth
  /// functions (max-pool, PReLU) whose switching surface lies within eps.
  bool kink_aware = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t elements_checked = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// Elements whose one-sided estimates disagreed with the central one
  /// (only counted in kink-aware mode).
  std::size_t kinks = 0;
};

using ScalarFn = std::function<Var<double>(Tape<double>&)>;

/// Compares backprop gradients of `fn` with central differences. The error per
/// element is |analytic - numeric| / max(1, |analytic|); the maximum is returned.
/// `fn` must build its loss from the tensors in `params` via Tape::param.
GradCheckResult grad_check(const ScalarFn& fn, std::span<Tensor<double>* const> params,
                           const GradCheckOptions& options = {});

}  // namespace protoosr::ad
