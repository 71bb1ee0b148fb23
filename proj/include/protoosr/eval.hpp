#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "protoosr/tensor.hpp"

namespace protoosr {

/// Label value standing for "not one of the known classes".
inline constexpr int kUnknown = -1;

struct ScoredSample {
  double min_distance = 0.0;  // plain Euclidean distance to the nearest prototype
  int nearest_class = 0;      // 0-based, lowest index on ties
  double known_score = 1.0;   // exp(-min_distance)
};

/// Nearest-prototype scoring of each feature row.
std::vector<ScoredSample> score(const Tensor<float>& features, const Tensor<float>& prototypes);

/// Percentile (0 < p < 100) of the given distances with linear interpolation
/// between order statistics: position p/100 * (n - 1) in the sorted sample.
double calibrate_threshold(std::span<const double> train_known_distances, double percentile);

/// kUnknown when min_distance > tau, otherwise nearest_class.
int predict_open(const ScoredSample& sample, double tau);

/// P(known score > unknown score) with ties counted one half, from rank sums.
double auroc(std::span<const double> known_scores, std::span<const double> unknown_scores);

/// Maps the Mann-Whitney count u (ties counted one half) over `pairs` pairs to
/// a rate. The smaller of u and pairs - u is divided, so exchanging the two
/// samples gives exactly 1 - the original value.
double auroc_from_count(double u, double pairs);

double closed_accuracy(std::span<const int> predictions, std::span<const int> labels);

struct F1Breakdown {
  std::vector<double> per_class;  // known classes 0..N-1, then the unknown class
  double macro = 0.0;
};

/// Macro-averaged F1 over the N known classes plus kUnknown. A class with no
/// true positives scores 0.
F1Breakdown f1_scores(std::span<const int> predictions, std::span<const int> truths, std::size_t known_classes);

double macro_f1(std::span<const int> predictions, std::span<const int> truths, std::size_t known_classes);

/// 1 - sqrt(2 * n_train / (n_test + n_target)).
double openness(std::size_t n_train, std::size_t n_test, std::size_t n_target);

struct Histogram {
  std::vector<double> edges;  // bins + 1 values
  std::vector<std::size_t> counts;

  std::size_t total() const;
};

struct DistanceHistograms {
  Histogram known;
  Histogram unknown;
};

/// Euclidean distance of every feature row to `center`.
std::vector<double> center_distances(const Tensor<float>& features, std::span<const double> center);

/// Bins both distance sets on a shared equal-width grid spanning their pooled
/// range. The last bin is closed on the right.
DistanceHistograms distance_histograms(const Tensor<float>& features_known, const Tensor<float>& features_unknown,
                                       std::span<const double> center, std::size_t bins = 50);

double median(std::vector<double> values);

/// Aggregates of one trained model on one protocol.
struct EvalReport {
  double closed_accuracy = 0.0;
  double auroc = 0.0;
  double macro_f1 = 0.0;
  double threshold = 0.0;
  double percentile = 95.0;
  double openness = 0.0;
  std::vector<double> per_class_f1;
  DistanceHistograms histograms;
  double median_known_center_distance = 0.0;
  double median_unknown_center_distance = 0.0;
  std::size_t known_samples = 0;
  std::size_t unknown_samples = 0;
};

}  // namespace protoosr
