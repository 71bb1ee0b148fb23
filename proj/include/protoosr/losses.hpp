#pragma once

#include <span>
#include <string>
#include <utility>

#include "protoosr/autodiff.hpp"

// Prototype losses. Labels are 0-based known-class indices throughout.
//
//   PL     ce
//   GCPL   ce + lambda * pl
//   SLCPL  ce + lambda * pl + slc_weight * slc
//
// ce is the cross-entropy of the softmax over negative distances, pl the mean
// squared distance of each feature to its own prototype, and slc the sample
// variance of the prototype distances to their centroid.

namespace protoosr {

enum class LossVariant { kPL, kGCPL, kSLCPL };
enum class DistanceMode { kSquared, kPlain };

std::string to_string(LossVariant v);
std::string to_string(DistanceMode m);
LossVariant parse_loss_variant(const std::string& s);
DistanceMode parse_distance_mode(const std::string& s);

/// Added under the square root whenever a plain Euclidean distance is taken.
inline constexpr double kSqrtEpsilon = 1e-12;

struct LossConfig {
  LossVariant variant = LossVariant::kSLCPL;
  double lambda = 0.1;
  DistanceMode distance_in_logits = DistanceMode::kSquared;
  double slc_weight = 1.0;
  /// Differentiate through the centroid's dependence on the prototypes.
  bool centroid_gradient = true;

  void validate() const;
};

struct LossReport {
  double total = 0.0;
  double ce_term = 0.0;
  double pl_term = 0.0;
  double slc_term = 0.0;
};

/// Mean over the batch of -log softmax(-distances)[label], stabilized by
/// subtracting each row's minimum distance.
template <typename T>
ad::Var<T> dce_loss(ad::Tape<T>& tape, ad::Var<T> distances, std::span<const int> labels);

/// Row-wise softmax of -distances, the class posterior used by dce_loss.
template <typename T>
Tensor<T> distance_posterior(const Tensor<T>& distances);

template <typename T>
ad::Var<T> pl_term(ad::Tape<T>& tape, ad::Var<T> features, ad::Var<T> prototypes, std::span<const int> labels);

template <typename T>
ad::Var<T> slc_term(ad::Tape<T>& tape, ad::Var<T> prototypes, bool centroid_gradient = true);

/// Distances entering the softmax: squared Euclidean, or its guarded square root.
template <typename T>
ad::Var<T> logit_distances(ad::Tape<T>& tape, DistanceMode mode, ad::Var<T> features, ad::Var<T> prototypes);

/// Builds the configured loss; terms excluded by the variant are reported as 0.
template <typename T>
std::pair<ad::Var<T>, LossReport> total_loss(ad::Tape<T>& tape, const LossConfig& config, ad::Var<T> features,
                                             ad::Var<T> prototypes, std::span<const int> labels);

}  // namespace protoosr
