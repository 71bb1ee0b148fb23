#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "protoosr/tensor.hpp"

namespace protoosr {

/// Images (M x C x H x W, values in [0, 1]) with optional class labels.
struct ImageDataset {
  std::string name;
  Tensor<float> images;
  std::vector<int> labels;  // empty for unlabeled outlier sets
  std::size_t class_count = 0;

  std::size_t size() const { return images.rank() == 0 ? 0 : images.dim(0); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  bool labeled() const { return !labels.empty(); }
  /// Values per sample.
  std::size_t sample_size() const { return channels() * height() * width(); }
};

/// Reads an IDX image file (magic 0x00000803) and, when `labels_path` is not
/// empty, the matching IDX label file (magic 0x00000801). Pixels are divided
/// by 255.
ImageDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                      const std::string& name = "idx");

/// Writes IDX image/label files; pixels are rounded from [0, 1] to bytes.
void write_idx(const ImageDataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

enum class CifarKind { kCifar10, kCifar100 };

/// Concatenates CIFAR binary batch files. Each record is one label byte
/// (CIFAR-10) or a coarse and a fine label byte (CIFAR-100, the fine label is
/// used) followed by 1024 R, 1024 G and 1024 B bytes.
ImageDataset load_cifar_binary(const std::vector<std::filesystem::path>& paths, CifarKind kind,
                               const std::string& name = "cifar");

/// i.i.d. uniform [0, 1] pixels.
ImageDataset make_noise(std::size_t count, std::size_t channels, std::size_t height, std::size_t width,
                        std::uint64_t seed, const std::string& name = "noise");

/// clamp(image + U[0, 1] noise, 0, 1) per pixel. Labels are dropped.
ImageDataset make_mnist_noise(const ImageDataset& mnist_test, std::uint64_t seed,
                              const std::string& name = "mnist-noise");

/// Replicates a single channel or averages channels down to one.
ImageDataset convert_channels(const ImageDataset& dataset, std::size_t channels);

/// Bilinear resampling with half-pixel centers.
ImageDataset resize_bilinear(const ImageDataset& dataset, std::size_t height, std::size_t width);

/// Channel conversion followed by resizing, skipping either when not needed.
ImageDataset adapt(const ImageDataset& dataset, std::size_t channels, std::size_t height, std::size_t width);

/// Samples whose index passes `keep`, in original order.
ImageDataset select(const ImageDataset& dataset, const std::function<bool(std::size_t)>& keep);

/// Copies the given sample indices into a contiguous batch tensor.
Tensor<float> gather(const ImageDataset& dataset, std::span<const std::size_t> indices);

/// Permutation of 0..n-1 for one epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t shuffle_seed, std::size_t epoch);

// ---------------------------------------------------------------------------
// Known / unknown protocols

enum class SplitStyle {
  kWithin,         // known and unknown classes drawn from one dataset
  kCross,          // known from the first dataset, unknown from the second (CIFAR+K)
  kOpennessSweep,  // like kWithin; unknown classes are listed in sampling order for prefix sweeps
  kOutlier,        // every listed known class is used; unknowns come from outlier sets
};

std::string to_string(SplitStyle s);
SplitStyle parse_split_style(const std::string& s);

struct SplitRequest {
  SplitStyle style = SplitStyle::kWithin;
  std::string known_source = "mnist";
  std::size_t known_class_count = 10;
  std::string unknown_source;            // defaults to known_source
  std::size_t unknown_class_count = 0;   // defaults to known_class_count
  std::size_t n_known = 6;
  std::size_t n_unknown = 0;             // 0 means every remaining class
  std::uint64_t trial_seed = 0;
};

struct SplitProtocol {
  SplitStyle style = SplitStyle::kWithin;
  std::vector<int> known;    // original ids; known[i] is relabeled to i
  std::vector<int> unknown;  // original ids in unknown_source, sampling order
  std::string known_source;
  std::string unknown_source;
  std::uint64_t trial_seed = 0;
  double openness = 0.0;

  std::size_t n_known() const { return known.size(); }
  /// 0-based known index of an original label, or kUnknown.
  int relabel(int original) const;
  bool is_known(int original) const { return relabel(original) >= 0; }
  bool is_unknown(int original) const;
};

SplitProtocol make_split(const SplitRequest& request);

/// Known-class samples of `dataset`, labels replaced by their 0-based known index.
ImageDataset known_subset(const ImageDataset& dataset, const SplitProtocol& split);

/// Samples of the listed unknown classes (first `limit` entries of split.unknown,
/// or all when limit is 0). Labels are set to kUnknown.
ImageDataset unknown_subset(const ImageDataset& dataset, const SplitProtocol& split, std::size_t limit = 0);

}  // namespace protoosr
