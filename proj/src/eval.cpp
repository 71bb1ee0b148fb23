#include "protoosr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace protoosr {

std::vector<ScoredSample> score(const Tensor<float>& features, const Tensor<float>& prototypes) {
  if (features.rank() != 2 || prototypes.rank() != 2 || features.dim(1) != prototypes.dim(1)) {
    throw DimensionError("score: features " + shape_str(features.shape()) + " vs prototypes " +
                         shape_str(prototypes.shape()));
  }
  const auto b = features.dim(0), n = prototypes.dim(0), d = features.dim(1);
  std::vector<ScoredSample> out(b);
  for (std::size_t r = 0; r < b; ++r) {
    double best = 0.0;
    int best_class = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(features[r * d + k]) - static_cast<double>(prototypes[i * d + k]);
        sq += diff * diff;
      }
      if (i == 0 || sq < best) {
        best = sq;
        best_class = static_cast<int>(i);
      }
    }
    out[r].min_distance = std::sqrt(best);
    out[r].nearest_class = best_class;
    out[r].known_score = std::exp(-out[r].min_distance);
  }
  return out;
}

double calibrate_threshold(std::span<const double> train_known_distances, double percentile) {
  if (train_known_distances.empty()) throw UsageError("calibrate_threshold needs at least one distance");
  if (!(percentile > 0.0 && percentile < 100.0)) throw UsageError("percentile must lie strictly between 0 and 100");
  std::vector<double> sorted(train_known_distances.begin(), train_known_distances.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = percentile / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

int predict_open(const ScoredSample& sample, double tau) {
  return sample.min_distance > tau ? kUnknown : sample.nearest_class;
}

double auroc(std::span<const double> known_scores, std::span<const double> unknown_scores) {
  if (known_scores.empty() || unknown_scores.empty()) throw UsageError("auroc needs scores on both sides");
  struct Entry {
    double score;
    bool known;
  };
  std::vector<Entry> all;
  all.reserve(known_scores.size() + unknown_scores.size());
  for (double s : known_scores) all.push_back({s, true});
  for (double s : unknown_scores) all.push_back({s, false});
  for (const auto& e : all)
    if (std::isnan(e.score)) throw NumericError("auroc: NaN score");
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // Mann-Whitney U of the known sample: each tie group contributes its known
  // count times (unknowns strictly below + half the unknowns inside the group).
  // Everything stays a multiple of 0.5, so the count is exact.
  double u = 0.0;
  std::size_t unknown_below = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i, k_in = 0, u_in = 0;
    while (j < all.size() && all[j].score == all[i].score) {
      (all[j].known ? k_in : u_in)++;
      ++j;
    }
    u += static_cast<double>(k_in) * (static_cast<double>(unknown_below) + 0.5 * static_cast<double>(u_in));
    unknown_below += u_in;
    i = j;
  }
  const double pairs = static_cast<double>(known_scores.size()) * static_cast<double>(unknown_scores.size());
  return auroc_from_count(u, pairs);
}

double auroc_from_count(double u, double pairs) {
  const double rest = pairs - u;
  return u <= rest ? u / pairs : 1.0 - rest / pairs;
}

double closed_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw UsageError("closed_accuracy: length mismatch");
  if (predictions.empty()) throw UsageError("closed_accuracy: no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

F1Breakdown f1_scores(std::span<const int> predictions, std::span<const int> truths, std::size_t known_classes) {
  if (predictions.size() != truths.size()) throw UsageError("macro_f1: length mismatch");
  const auto classes = known_classes + 1;
  const auto slot = [&](int label) {
    if (label == kUnknown) return known_classes;
    if (label < 0 || static_cast<std::size_t>(label) >= known_classes) {
      throw UsageError("macro_f1: label " + std::to_string(label) + " outside the known classes and kUnknown");
    }
    return static_cast<std::size_t>(label);
  };
  std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto p = slot(predictions[i]), t = slot(truths[i]);
    if (p == t) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  F1Breakdown out;
  out.per_class.resize(classes, 0.0);
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (tp[c] > 0) {
      const double precision = static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c]);
      const double recall = static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fn[c]);
      out.per_class[c] = 2.0 * precision * recall / (precision + recall);
    }
    total += out.per_class[c];
  }
  out.macro = total / static_cast<double>(classes);
  return out;
}

double macro_f1(std::span<const int> predictions, std::span<const int> truths, std::size_t known_classes) {
  return f1_scores(predictions, truths, known_classes).macro;
}

double openness(std::size_t n_train, std::size_t n_test, std::size_t n_target) {
  if (n_train == 0 || n_test == 0 || n_target == 0) throw UsageError("openness: class counts must be positive");
  if (2 * n_train > n_test + n_target) {
    throw UsageError("openness: 2 * n_train exceeds n_test + n_target");
  }
  return 1.0 - std::sqrt(2.0 * static_cast<double>(n_train) / static_cast<double>(n_test + n_target));
}

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::vector<double> center_distances(const Tensor<float>& features, std::span<const double> center) {
  if (features.rank() != 2 || features.dim(1) != center.size()) {
    throw DimensionError("center_distances: features " + shape_str(features.shape()) + " vs center of length " +
                         std::to_string(center.size()));
  }
  const auto b = features.dim(0), d = features.dim(1);
  std::vector<double> out(b);
  for (std::size_t r = 0; r < b; ++r) {
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = static_cast<double>(features[r * d + k]) - center[k];
      sq += diff * diff;
    }
    out[r] = std::sqrt(sq);
  }
  return out;
}

DistanceHistograms distance_histograms(const Tensor<float>& features_known, const Tensor<float>& features_unknown,
                                       std::span<const double> center, std::size_t bins) {
  if (features_known.rank() != 2 || features_unknown.rank() != 2 || features_known.dim(0) == 0 ||
      features_unknown.dim(0) == 0) {
    throw UsageError("distance_histograms needs non-empty known and unknown feature sets");
  }
  if (bins == 0) throw UsageError("distance_histograms needs at least one bin");
  const auto known = center_distances(features_known, center);
  const auto unknown = center_distances(features_unknown, center);
  double lo = known[0], hi = known[0];
  for (const auto* set : {&known, &unknown}) {
    for (double v : *set) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  Histogram base;
  base.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) base.edges[i] = lo + width * static_cast<double>(i);
  base.edges[bins] = hi;
  base.counts.assign(bins, 0);
  const auto fill = [&](const std::vector<double>& values) {
    Histogram h = base;
    for (double v : values) {
      std::size_t idx = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
      h.counts[std::min(idx, bins - 1)]++;
    }
    return h;
  };
  return {fill(known), fill(unknown)};
}

double median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median of an empty set");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace protoosr
