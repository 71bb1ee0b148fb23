#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "protoosr/config.hpp"
#include "protoosr/data.hpp"
#include "protoosr/encoder.hpp"
#include "protoosr/optimizer.hpp"

namespace protoosr {

/// Per-epoch means of the loss terms.
struct EpochLog {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double total = 0.0;
  double ce = 0.0;
  double pl = 0.0;
  double slc = 0.0;
  double grad_norm = 0.0;  // mean pre-clip gradient norm
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN when not validated
};

/// Everything needed to resume or evaluate a run.
///
/// File layout (little endian): "PROTOOSR", u32 version, then config text,
/// split, encoder tensors, running statistics, prototypes, optimizer state,
/// epoch counter and the epoch log. Strings and arrays are u64-length
/// prefixed; tensors are u32 rank, u64 extents, raw float32 values.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  RunConfig config;
  SplitProtocol split;
  EncoderParams<float> encoder;
  PrototypeSet<float> prototypes;
  OptimState optim;
  std::size_t epochs_done = 0;
  std::vector<EpochLog> log;
};

std::string serialize(const Checkpoint& checkpoint);
/// Throws FormatError on truncated or malformed input.
Checkpoint deserialize(const std::string& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace protoosr
