#include "protoosr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "protoosr/eval.hpp"
#include "protoosr/random.hpp"

namespace protoosr {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarPixels = 3 * 32 * 32;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& what) {
  if (bytes.size() < offset + 4) throw FormatError(what + ": file truncated in header", bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

std::size_t max_label_count(const std::vector<int>& labels) {
  int hi = -1;
  for (int y : labels) hi = std::max(hi, y);
  return static_cast<std::size_t>(hi + 1);
}

}  // namespace

ImageDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                      const std::string& name) {
  const auto bytes = read_file(images_path);
  const auto what = images_path.string();
  if (bytes.empty()) throw FormatError(what + ": empty file", 0);
  const auto magic = read_be32(bytes, 0, what);
  if (magic != kIdxImageMagic) throw FormatError(what + ": bad IDX image magic", 0);
  const std::size_t count = read_be32(bytes, 4, what);
  const std::size_t rows = read_be32(bytes, 8, what);
  const std::size_t cols = read_be32(bytes, 12, what);
  const std::size_t expected = 16 + count * rows * cols;
  if (bytes.size() != expected) {
    throw FormatError(what + ": expected " + std::to_string(expected) + " bytes for " + std::to_string(count) +
                          " images of " + std::to_string(rows) + "x" + std::to_string(cols),
                      std::min(bytes.size(), expected));
  }
  ImageDataset ds;
  ds.name = name;
  ds.images = Tensor<float>(Shape{count, 1, rows, cols});
  for (std::size_t i = 0; i < count * rows * cols; ++i) ds.images[i] = static_cast<float>(bytes[16 + i]) / 255.0f;

  if (!labels_path.empty()) {
    const auto lbytes = read_file(labels_path);
    const auto lwhat = labels_path.string();
    if (lbytes.empty()) throw FormatError(lwhat + ": empty file", 0);
    if (read_be32(lbytes, 0, lwhat) != kIdxLabelMagic) throw FormatError(lwhat + ": bad IDX label magic", 0);
    const std::size_t lcount = read_be32(lbytes, 4, lwhat);
    if (lcount != count) {
      throw FormatError(lwhat + ": " + std::to_string(lcount) + " labels for " + std::to_string(count) + " images", 4);
    }
    if (lbytes.size() != 8 + lcount) {
      throw FormatError(lwhat + ": expected " + std::to_string(8 + lcount) + " bytes",
                        std::min(lbytes.size(), 8 + lcount));
    }
    ds.labels.assign(lbytes.begin() + 8, lbytes.end());
    ds.class_count = max_label_count(ds.labels);
  }
  return ds;
}

void write_idx(const ImageDataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (dataset.channels() != 1) throw UsageError("IDX images must have a single channel");
  std::vector<unsigned char> out;
  put_be32(out, kIdxImageMagic);
  put_be32(out, static_cast<std::uint32_t>(dataset.size()));
  put_be32(out, static_cast<std::uint32_t>(dataset.height()));
  put_be32(out, static_cast<std::uint32_t>(dataset.width()));
  for (float v : dataset.images.values()) {
    out.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  }
  std::ofstream(images_path, std::ios::binary).write(reinterpret_cast<const char*>(out.data()),
                                                     static_cast<std::streamsize>(out.size()));
  if (labels_path.empty()) return;
  out.clear();
  put_be32(out, kIdxLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(dataset.labels.size()));
  for (int y : dataset.labels) out.push_back(static_cast<unsigned char>(y));
  std::ofstream(labels_path, std::ios::binary).write(reinterpret_cast<const char*>(out.data()),
                                                     static_cast<std::streamsize>(out.size()));
}

ImageDataset load_cifar_binary(const std::vector<std::filesystem::path>& paths, CifarKind kind,
                               const std::string& name) {
  const std::size_t label_bytes = kind == CifarKind::kCifar10 ? 1 : 2;
  const std::size_t record = label_bytes + kCifarPixels;
  std::vector<float> pixels;
  ImageDataset ds;
  ds.name = name;
  for (const auto& path : paths) {
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % record != 0) {
      throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of the " +
                            std::to_string(record) + "-byte record",
                        bytes.size() - bytes.size() % record);
    }
    for (std::size_t off = 0; off < bytes.size(); off += record) {
      ds.labels.push_back(bytes[off + label_bytes - 1]);
      for (std::size_t i = 0; i < kCifarPixels; ++i) {
        pixels.push_back(static_cast<float>(bytes[off + label_bytes + i]) / 255.0f);
      }
    }
  }
  const auto count = ds.labels.size();
  ds.images = Tensor<float>(Shape{count, 3, 32, 32}, std::move(pixels));
  ds.class_count = kind == CifarKind::kCifar10 ? 10 : 100;
  return ds;
}

ImageDataset make_noise(std::size_t count, std::size_t channels, std::size_t height, std::size_t width,
                        std::uint64_t seed, const std::string& name) {
  if (count == 0) throw UsageError("make_noise needs at least one sample");
  Rng rng(derive_seed(seed, "noise"));
  ImageDataset ds;
  ds.name = name;
  ds.images = Tensor<float>(Shape{count, channels, height, width});
  for (auto& v : ds.images.values()) v = static_cast<float>(rng.uniform());
  return ds;
}

ImageDataset make_mnist_noise(const ImageDataset& mnist_test, std::uint64_t seed, const std::string& name) {
  if (mnist_test.images.rank() != 4 || mnist_test.channels() != 1 || mnist_test.height() != 28 ||
      mnist_test.width() != 28) {
    throw DimensionError("make_mnist_noise expects 1x28x28 images, got " + shape_str(mnist_test.images.shape()));
  }
  Rng rng(derive_seed(seed, "mnist-noise"));
  ImageDataset ds;
  ds.name = name;
  ds.images = mnist_test.images;
  for (auto& v : ds.images.values()) v = std::clamp(v + static_cast<float>(rng.uniform()), 0.0f, 1.0f);
  return ds;
}

ImageDataset convert_channels(const ImageDataset& dataset, std::size_t channels) {
  const auto c = dataset.channels();
  if (c == channels) return dataset;
  const auto m = dataset.size(), plane = dataset.height() * dataset.width();
  ImageDataset out = dataset;
  out.images = Tensor<float>(Shape{m, channels, dataset.height(), dataset.width()});
  if (c == 1) {
    for (std::size_t s = 0; s < m; ++s)
      for (std::size_t k = 0; k < channels; ++k)
        std::copy_n(dataset.images.data() + s * plane, plane, out.images.data() + (s * channels + k) * plane);
  } else if (channels == 1) {
    for (std::size_t s = 0; s < m; ++s) {
      for (std::size_t p = 0; p < plane; ++p) {
        float acc = 0.0f;
        for (std::size_t k = 0; k < c; ++k) acc += dataset.images[(s * c + k) * plane + p];
        out.images[s * plane + p] = acc / static_cast<float>(c);
      }
    }
  } else {
    throw UsageError("cannot convert " + std::to_string(c) + " channels to " + std::to_string(channels));
  }
  return out;
}

ImageDataset resize_bilinear(const ImageDataset& dataset, std::size_t height, std::size_t width) {
  const auto h = dataset.height(), w = dataset.width();
  if (h == height && w == width) return dataset;
  const auto planes = dataset.size() * dataset.channels();
  ImageDataset out = dataset;
  out.images = Tensor<float>(Shape{dataset.size(), dataset.channels(), height, width});
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = dataset.images.data() + p * h * w;
    float* dst = out.images.data() + p * height * width;
    for (std::size_t y = 0; y < height; ++y) {
      const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
      const auto y0 = static_cast<std::size_t>(fy);
      const auto y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < width; ++x) {
        const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
        const auto x0 = static_cast<std::size_t>(fx);
        const auto x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        const double top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
        const double bottom = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
        dst[y * width + x] = static_cast<float>(top * (1.0 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

ImageDataset adapt(const ImageDataset& dataset, std::size_t channels, std::size_t height, std::size_t width) {
  return resize_bilinear(convert_channels(dataset, channels), height, width);
}

ImageDataset select(const ImageDataset& dataset, const std::function<bool(std::size_t)>& keep) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (keep(i)) idx.push_back(i);
  ImageDataset out;
  out.name = dataset.name;
  out.class_count = dataset.class_count;
  out.images = gather(dataset, idx);
  if (dataset.labeled())
    for (auto i : idx) out.labels.push_back(dataset.labels[i]);
  return out;
}

Tensor<float> gather(const ImageDataset& dataset, std::span<const std::size_t> indices) {
  const auto per = dataset.sample_size();
  Tensor<float> batch(Shape{indices.size(), dataset.channels(), dataset.height(), dataset.width()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(dataset.images.data() + indices[i] * per, per, batch.data() + i * per);
  }
  return batch;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t shuffle_seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(shuffle_seed, "epoch", epoch));
  rng.shuffle(order.begin(), order.end());
  return order;
}

// ---------------------------------------------------------------------------

std::string to_string(SplitStyle s) {
  switch (s) {
    case SplitStyle::kWithin: return "within";
    case SplitStyle::kCross: return "cross";
    case SplitStyle::kOpennessSweep: return "openness-sweep";
    case SplitStyle::kOutlier: return "outlier";
  }
  return "?";
}

SplitStyle parse_split_style(const std::string& s) {
  if (s == "within") return SplitStyle::kWithin;
  if (s == "cross") return SplitStyle::kCross;
  if (s == "openness-sweep") return SplitStyle::kOpennessSweep;
  if (s == "outlier") return SplitStyle::kOutlier;
  throw UsageError("unknown split style '" + s + "' (expected within, cross, openness-sweep or outlier)");
}

int SplitProtocol::relabel(int original) const {
  for (std::size_t i = 0; i < known.size(); ++i)
    if (known[i] == original) return static_cast<int>(i);
  return kUnknown;
}

bool SplitProtocol::is_unknown(int original) const {
  return std::find(unknown.begin(), unknown.end(), original) != unknown.end();
}

SplitProtocol make_split(const SplitRequest& request) {
  if (request.n_known < 2) throw ProtocolError("a split needs at least 2 known classes");
  SplitProtocol split;
  split.style = request.style;
  split.trial_seed = request.trial_seed;
  split.known_source = request.known_source;
  split.unknown_source = request.unknown_source.empty() ? request.known_source : request.unknown_source;
  const auto unknown_pool_size =
      request.unknown_class_count == 0 ? request.known_class_count : request.unknown_class_count;

  Rng rng(derive_seed(request.trial_seed, "split"));
  std::vector<int> classes(request.known_class_count);
  std::iota(classes.begin(), classes.end(), 0);
  rng.shuffle(classes.begin(), classes.end());

  switch (request.style) {
    case SplitStyle::kWithin:
    case SplitStyle::kOpennessSweep: {
      if (request.n_known >= request.known_class_count) {
        throw ProtocolError("n_known = " + std::to_string(request.n_known) + " leaves no unknown classes among " +
                            std::to_string(request.known_class_count));
      }
      split.unknown_source = split.known_source;
      const auto remaining = request.known_class_count - request.n_known;
      const auto n_unknown = request.n_unknown == 0 ? remaining : request.n_unknown;
      if (n_unknown > remaining) {
        throw ProtocolError("requested " + std::to_string(n_unknown) + " unknown classes, only " +
                            std::to_string(remaining) + " remain");
      }
      split.known.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(request.n_known));
      split.unknown.assign(classes.begin() + static_cast<std::ptrdiff_t>(request.n_known),
                           classes.begin() + static_cast<std::ptrdiff_t>(request.n_known + n_unknown));
      break;
    }
    case SplitStyle::kCross: {
      if (request.n_known > request.known_class_count) {
        throw ProtocolError("n_known exceeds the class count of " + split.known_source);
      }
      const auto n_unknown = request.n_unknown == 0 ? unknown_pool_size : request.n_unknown;
      if (n_unknown > unknown_pool_size) {
        throw ProtocolError("requested " + std::to_string(n_unknown) + " unknown classes from " +
                            split.unknown_source + " which has " + std::to_string(unknown_pool_size));
      }
      split.known.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(request.n_known));
      std::vector<int> pool(unknown_pool_size);
      std::iota(pool.begin(), pool.end(), 0);
      Rng unknown_rng(derive_seed(request.trial_seed, "split-unknown"));
      unknown_rng.shuffle(pool.begin(), pool.end());
      split.unknown.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_unknown));
      break;
    }
    case SplitStyle::kOutlier: {
      if (request.n_known > request.known_class_count) {
        throw ProtocolError("n_known exceeds the class count of " + split.known_source);
      }
      split.known.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(request.n_known));
      break;
    }
  }
  std::sort(split.known.begin(), split.known.end());
  // Outlier sets count as one additional unseen test class.
  const auto n_unknown_classes = split.style == SplitStyle::kOutlier ? 1 : split.unknown.size();
  split.openness = openness(split.known.size(), split.known.size() + n_unknown_classes, split.known.size());
  return split;
}

ImageDataset known_subset(const ImageDataset& dataset, const SplitProtocol& split) {
  if (!dataset.labeled()) throw ProtocolError("known_subset needs a labeled dataset");
  auto out = select(dataset, [&](std::size_t i) { return split.is_known(dataset.labels[i]); });
  for (auto& y : out.labels) y = split.relabel(y);
  out.class_count = split.n_known();
  return out;
}

ImageDataset unknown_subset(const ImageDataset& dataset, const SplitProtocol& split, std::size_t limit) {
  if (!dataset.labeled()) throw ProtocolError("unknown_subset needs a labeled dataset");
  const auto n = limit == 0 ? split.unknown.size() : std::min(limit, split.unknown.size());
  const std::vector<int> chosen(split.unknown.begin(), split.unknown.begin() + static_cast<std::ptrdiff_t>(n));
  auto out = select(dataset, [&](std::size_t i) {
    return std::find(chosen.begin(), chosen.end(), dataset.labels[i]) != chosen.end();
  });
  for (auto& y : out.labels) y = kUnknown;
  return out;
}

}  // namespace protoosr
