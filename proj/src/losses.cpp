#include "protoosr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "protoosr/encoder.hpp"

namespace protoosr {

std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::kPL: return "PL";
    case LossVariant::kGCPL: return "GCPL";
    case LossVariant::kSLCPL: return "SLCPL";
  }
  return "?";
}

std::string to_string(DistanceMode m) { return m == DistanceMode::kSquared ? "squared" : "plain"; }

LossVariant parse_loss_variant(const std::string& s) {
  if (s == "PL") return LossVariant::kPL;
  if (s == "GCPL") return LossVariant::kGCPL;
  if (s == "SLCPL") return LossVariant::kSLCPL;
  throw UsageError("unknown loss variant '" + s + "' (expected PL, GCPL or SLCPL)");
}

DistanceMode parse_distance_mode(const std::string& s) {
  if (s == "squared") return DistanceMode::kSquared;
  if (s == "plain") return DistanceMode::kPlain;
  throw UsageError("unknown distance mode '" + s + "' (expected squared or plain)");
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw UsageError("lambda must be non-negative");
  if (!(slc_weight >= 0.0)) throw UsageError("slc weight must be non-negative");
}

namespace {

void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) {
    throw UsageError("got " + std::to_string(labels.size()) + " labels for a batch of " + std::to_string(batch));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw UsageError("label " + std::to_string(y) + " outside 0.." + std::to_string(classes - 1));
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> distance_posterior(const Tensor<T>& distances) {
  const auto b = distances.dim(0), n = distances.dim(1);
  Tensor<T> p(distances.shape());
  for (std::size_t r = 0; r < b; ++r) {
    const T* d = distances.data() + r * n;
    const double m = static_cast<double>(*std::min_element(d, d + n));
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(m - static_cast<double>(d[i]));
    for (std::size_t i = 0; i < n; ++i) p[r * n + i] = static_cast<T>(std::exp(m - static_cast<double>(d[i])) / s);
  }
  return p;
}

template <typename T>
ad::Var<T> dce_loss(ad::Tape<T>& tape, ad::Var<T> distances, std::span<const int> labels) {
  if (distances.shape().size() != 2) throw DimensionError("dce_loss expects a BxN distance matrix");
  const auto b = distances.dim(0), n = distances.dim(1);
  check_labels(labels, b, n);
  const T* d = distances.tensor().data();
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const T* row = d + r * n;
    const double m = static_cast<double>(*std::min_element(row, row + n));
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(m - static_cast<double>(row[i]));
    total += (static_cast<double>(row[labels[r]]) - m) + std::log(s);
  }
  auto result = tape.emit(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(b))), distances.requires_grad());
  if (result.requires_grad()) {
    std::vector<int> ys(labels.begin(), labels.end());
    tape.record([=] {
      const T scale = result.tensor().grad()[0] / static_cast<T>(b);
      const auto p = distance_posterior(distances.tensor());
      auto dd = distances.tensor().grad();
      for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
          const T target = static_cast<std::size_t>(ys[r]) == i ? T{1} : T{0};
          dd[r * n + i] += scale * (target - p[r * n + i]);
        }
      }
    });
  }
  return result;
}

template <typename T>
ad::Var<T> pl_term(ad::Tape<T>& tape, ad::Var<T> features, ad::Var<T> prototypes, std::span<const int> labels) {
  if (features.shape().size() != 2 || prototypes.shape().size() != 2 || features.dim(1) != prototypes.dim(1)) {
    throw DimensionError("pl_term: features " + shape_str(features.shape()) + " vs prototypes " +
                         shape_str(prototypes.shape()));
  }
  const auto b = features.dim(0), n = prototypes.dim(0), dim = features.dim(1);
  check_labels(labels, b, n);
  const T* f = features.tensor().data();
  const T* p = prototypes.tensor().data();
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const T* own = p + static_cast<std::size_t>(labels[r]) * dim;
    double acc = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = static_cast<double>(f[r * dim + k]) - static_cast<double>(own[k]);
      acc += diff * diff;
    }
    total += acc;
  }
  auto result = tape.emit(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(b))),
                          features.requires_grad() || prototypes.requires_grad());
  if (result.requires_grad()) {
    std::vector<int> ys(labels.begin(), labels.end());
    tape.record([=] {
      const T scale = T{2} * result.tensor().grad()[0] / static_cast<T>(b);
      const T* fv = features.tensor().data();
      const T* pv = prototypes.tensor().data();
      for (std::size_t r = 0; r < b; ++r) {
        const auto own = static_cast<std::size_t>(ys[r]) * dim;
        for (std::size_t k = 0; k < dim; ++k) {
          const T g = scale * (fv[r * dim + k] - pv[own + k]);
          if (features.requires_grad()) features.tensor().grad()[r * dim + k] += g;
          if (prototypes.requires_grad()) prototypes.tensor().grad()[own + k] -= g;
        }
      }
    });
  }
  return result;
}

template <typename T>
ad::Var<T> slc_term(ad::Tape<T>& tape, ad::Var<T> prototypes, bool centroid_gradient) {
  if (prototypes.shape().size() != 2) throw DimensionError("slc_term expects an NxD prototype matrix");
  const auto n = prototypes.dim(0), dim = prototypes.dim(1);
  if (n < 2) throw UsageError("slc_term needs at least 2 prototypes");
  const T* o = prototypes.tensor().data();

  std::vector<double> center(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dim; ++k) center[k] += static_cast<double>(o[i * dim + k]);
  for (auto& c : center) c /= static_cast<double>(n);

  std::vector<double> radius(n);
  double mean_radius = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = static_cast<double>(o[i * dim + k]) - center[k];
      sq += diff * diff;
    }
    radius[i] = std::sqrt(sq + kSqrtEpsilon);
    mean_radius += radius[i];
  }
  mean_radius /= static_cast<double>(n);
  double var = 0.0;
  for (auto r : radius) var += (r - mean_radius) * (r - mean_radius);
  var /= static_cast<double>(n - 1);

  auto result = tape.emit(Tensor<T>::scalar(static_cast<T>(var)), prototypes.requires_grad());
  if (result.requires_grad()) {
    tape.record([=] {
      const double dy = static_cast<double>(result.tensor().grad()[0]);
      const T* ov = prototypes.tensor().data();
      // u_i = dslc/dr_i * (O_i - O_c) / r_i; the mean-radius term drops out
      // because the deviations sum to zero.
      std::vector<double> u(n * dim);
      std::vector<double> u_mean(dim, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double g = dy * 2.0 * (radius[i] - mean_radius) / static_cast<double>(n - 1) / radius[i];
        for (std::size_t k = 0; k < dim; ++k) {
          u[i * dim + k] = g * (static_cast<double>(ov[i * dim + k]) - center[k]);
          u_mean[k] += u[i * dim + k];
        }
      }
      for (auto& v : u_mean) v /= static_cast<double>(n);
      auto grad = prototypes.tensor().grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dim; ++k)
          grad[i * dim + k] += static_cast<T>(u[i * dim + k] - (centroid_gradient ? u_mean[k] : 0.0));
    });
  }
  return result;
}

template <typename T>
ad::Var<T> logit_distances(ad::Tape<T>& tape, DistanceMode mode, ad::Var<T> features, ad::Var<T> prototypes) {
  auto sq = sq_distances(tape, features, prototypes);
  return mode == DistanceMode::kSquared ? sq : ad::sqrt_eps(tape, sq, static_cast<T>(kSqrtEpsilon));
}

template <typename T>
std::pair<ad::Var<T>, LossReport> total_loss(ad::Tape<T>& tape, const LossConfig& config, ad::Var<T> features,
                                             ad::Var<T> prototypes, std::span<const int> labels) {
  config.validate();
  auto distances = logit_distances(tape, config.distance_in_logits, features, prototypes);
  std::vector<ad::Var<T>> terms{dce_loss(tape, distances, labels)};
  std::vector<T> weights{T{1}};
  LossReport report;
  report.ce_term = static_cast<double>(terms[0].tensor()[0]);
  if (config.variant != LossVariant::kPL) {
    terms.push_back(pl_term(tape, features, prototypes, labels));
    weights.push_back(static_cast<T>(config.lambda));
    report.pl_term = static_cast<double>(terms.back().tensor()[0]);
  }
  if (config.variant == LossVariant::kSLCPL) {
    terms.push_back(slc_term(tape, prototypes, config.centroid_gradient));
    weights.push_back(static_cast<T>(config.slc_weight));
    report.slc_term = static_cast<double>(terms.back().tensor()[0]);
  }
  auto total = ad::weighted_sum<T>(tape, terms, weights);
  report.total = static_cast<double>(total.tensor()[0]);
  return {total, report};
}

#define PROTOOSR_INSTANTIATE(T)                                                                            \
  template Tensor<T> distance_posterior(const Tensor<T>&);                                                 \
  template ad::Var<T> dce_loss(ad::Tape<T>&, ad::Var<T>, std::span<const int>);                            \
  template ad::Var<T> pl_term(ad::Tape<T>&, ad::Var<T>, ad::Var<T>, std::span<const int>);                 \
  template ad::Var<T> slc_term(ad::Tape<T>&, ad::Var<T>, bool);                                            \
  template ad::Var<T> logit_distances(ad::Tape<T>&, DistanceMode, ad::Var<T>, ad::Var<T>);                 \
  template std::pair<ad::Var<T>, LossReport> total_loss(ad::Tape<T>&, const LossConfig&, ad::Var<T>,       \
                                                        ad::Var<T>, std::span<const int>);

PROTOOSR_INSTANTIATE(float)
PROTOOSR_INSTANTIATE(double)

#undef PROTOOSR_INSTANTIATE

}  // namespace protoosr
