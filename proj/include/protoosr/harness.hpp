#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "protoosr/checkpoint.hpp"
#include "protoosr/config.hpp"
#include "protoosr/data.hpp"
#include "protoosr/eval.hpp"

// End-to-end experiment plumbing: data preparation, the training loop,
// evaluation, the openness sweep and feature export.

namespace protoosr {

/// Datasets of one protocol, already adapted to the encoder input shape.
struct RunData {
  SplitProtocol split;
  ImageDataset train_known;                // labels 0..N-1
  ImageDataset test_known;                 // labels 0..N-1
  std::vector<ImageDataset> test_unknown;  // labels kUnknown, one entry per source
  ImageDataset test_full;                  // whole labeled test set, for prefix sweeps

  std::size_t unknown_count() const;
};

/// Loads the configured datasets, builds the split and attaches outlier sets.
/// Uniform noise comes from the "noise" stream, MNIST-noise from "mnist-noise".
RunData prepare_data(const RunConfig& config);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains from scratch until optim.total_epochs. Initialization uses the
/// "init" stream, batch order the "shuffle" stream. A non-finite loss or
/// gradient aborts with a NumericError naming the epoch and batch.
Checkpoint train(const RunConfig& config, const RunData& data, const EpochCallback& on_epoch = {});

/// Continues a checkpoint up to its config's total_epochs.
void resume(Checkpoint& checkpoint, const RunData& data, const EpochCallback& on_epoch = {});

/// Scores of one model on one protocol; the threshold is calibrated on the
/// training known-class distances.
struct ModelScores {
  std::vector<ScoredSample> train_known;
  std::vector<ScoredSample> test_known;
  std::vector<ScoredSample> test_unknown;
  Tensor<float> test_known_features;
  Tensor<float> test_unknown_features;
  double threshold = 0.0;
};

ModelScores score_model(const Checkpoint& checkpoint, const RunData& data, double percentile);

/// Throws ProtocolError when the checkpoint was trained on different known classes.
void check_protocol(const Checkpoint& checkpoint, const RunData& data);

EvalReport evaluate(const Checkpoint& checkpoint, const RunData& data);

/// One-line JSON record carrying every metric and the full config.
std::string report_json(const EvalReport& report, const RunConfig& config);

struct SweepPoint {
  std::size_t unknown_classes = 0;
  double openness = 0.0;
  double macro_f1 = 0.0;
};

/// macro-F1 with the first k entries of the split's unknown classes, for each
/// requested k. The model and threshold stay fixed across points.
std::vector<SweepPoint> sweep_openness(const Checkpoint& checkpoint, const RunData& data,
                                       const std::vector<std::size_t>& unknown_counts);

void write_sweep_csv(const std::vector<SweepPoint>& points, std::ostream& out);

/// CSV: kind,dataset,label,f0..f{D-1},min_distance,center_distance; one row
/// per known and unknown test sample, then one per prototype.
void export_features(const Checkpoint& checkpoint, const RunData& data, std::ostream& out);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};

Summary summarize(const std::vector<double>& values);

/// Reads report records (one JSON object per line) and summarizes
/// closed_accuracy, auroc and macro_f1. Output is one JSON line.
std::string aggregate_reports(const std::vector<std::string>& lines);

}  // namespace protoosr
