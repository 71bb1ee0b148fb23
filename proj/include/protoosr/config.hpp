#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "protoosr/data.hpp"
#include "protoosr/encoder.hpp"
#include "protoosr/losses.hpp"
#include "protoosr/optimizer.hpp"

// Run configuration.
//
// On disk this is flat key/value text with [section] headers:
//
//   [loss]
//   variant = SLCPL
//   lambda = 0.1
//
// Every key is addressed as section.key, both in files and in --set
// overrides. Unknown keys and malformed values are ConfigErrors.

namespace protoosr {

enum class DataFormat { kIdx, kCifar10, kCifar100 };

std::string to_string(DataFormat f);
DataFormat parse_data_format(const std::string& s);

struct DataConfig {
  DataFormat format = DataFormat::kIdx;
  std::string name = "mnist";
  std::string train_images = "data/mnist/train-images-idx3-ubyte";
  std::string train_labels = "data/mnist/train-labels-idx1-ubyte";
  std::string test_images = "data/mnist/t10k-images-idx3-ubyte";
  std::string test_labels = "data/mnist/t10k-labels-idx1-ubyte";
  std::vector<std::string> train_files;  // CIFAR batch files
  std::vector<std::string> test_files;
  // Second dataset for cross-dataset protocols (unknown classes).
  DataFormat unknown_format = DataFormat::kCifar100;
  std::string unknown_name;
  std::vector<std::string> unknown_test_files;
  std::size_t train_limit = 0;  // 0 keeps every sample
  std::size_t test_limit = 0;
};

struct SplitConfig {
  SplitStyle style = SplitStyle::kWithin;
  std::size_t n_known = 6;
  std::size_t n_unknown = 0;
  std::uint64_t trial_seed = 0;
};

struct OutlierConfig {
  std::size_t noise_samples = 0;  // uniform-noise images added to the unknown test set
  bool mnist_noise = false;       // add noise-corrupted copies of the test images
};

struct PrototypeConfig {
  PrototypeInit init = PrototypeInit::kGaussian;
  double scale = 1.0;
};

struct OptimConfig {
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 128;
  /// Joint gradient-norm clip applied before every step; 0 disables it.
  double clip_norm = 5.0;
  LrSchedule schedule{};
};

struct EvalConfig {
  double percentile = 95.0;
  std::size_t histogram_bins = 50;
  std::size_t validate_every = 1;  // epochs between validation passes; 0 disables
  std::vector<std::size_t> sweep_unknown_counts;  // sweep-openness points
};

struct RunConfig {
  DataConfig data;
  SplitConfig split;
  OutlierConfig outlier;
  EncoderConfig encoder;  // input extents of 0 are taken from the data
  PrototypeConfig prototypes;
  LossConfig loss;
  OptimConfig optim;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  /// Sub-seed for one named random consumer ("init", "shuffle", "noise").
  std::uint64_t stream_seed(const char* stream) const;
  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// Environment variable overriding run.output_dir.
inline constexpr const char* kOutputDirEnv = "PROTOOSR_OUTPUT_DIR";

std::string to_string(PrototypeInit p);
PrototypeInit parse_prototype_init(const std::string& s);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Applies one "section.key=value" override.
void apply_override(RunConfig& config, const std::string& assignment);
void set_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_value(const RunConfig& config, const std::string& key);

/// Canonical text form: every key, fixed order, round-trips through parse_config.
std::string to_text(const RunConfig& config);

/// All recognised keys in canonical order.
std::vector<std::string> config_keys();

/// Applies the output directory environment override, if set.
void apply_environment(RunConfig& config);

}  // namespace protoosr
