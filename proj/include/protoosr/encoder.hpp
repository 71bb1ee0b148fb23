#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "protoosr/autodiff.hpp"
#include "protoosr/tensor.hpp"

namespace protoosr {

/// Convolutional embedding network: per stage a 3x3 convolution (padding 1),
/// optional batch normalization, PReLU and 2x2 max-pool, then one linear layer
/// to the embedding dimension.
struct EncoderConfig {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::vector<std::size_t> stages{32, 64, 128};
  std::size_t embedding_dim = 128;
  double slope_init = 0.25;
  /// Without it SGD at lr 0.1 diverges on raw pixel inputs.
  bool batch_norm = true;
  double bn_momentum = 0.1;

  void validate() const;
  /// Spatial extent after the last pooling stage.
  std::size_t final_height() const;
  std::size_t final_width() const;
  std::size_t flat_features() const;
};

template <typename T>
struct EncoderParams {
  std::vector<Tensor<T>> kernels;  // stage i: stages[i] x in_ch x 3 x 3
  std::vector<Tensor<T>> slopes;   // stage i: stages[i]
  // batch norm, empty when disabled: learnable scale/shift and running stats
  std::vector<Tensor<T>> bn_gamma;
  std::vector<Tensor<T>> bn_beta;
  std::vector<Tensor<T>> bn_mean;
  std::vector<Tensor<T>> bn_var;
  Tensor<T> fc_weight;             // D x flat_features
  Tensor<T> fc_bias;               // D

  /// Every learnable tensor in a fixed order (kernels, slopes, bn, fc).
  std::vector<Tensor<T>*> tensors();
  std::vector<const Tensor<T>*> tensors() const;
  std::vector<std::string> names() const;
  /// Non-learnable state (running statistics).
  std::vector<Tensor<T>*> buffers();
  std::vector<const Tensor<T>*> buffers() const;

  template <typename U>
  EncoderParams<U> cast() const {
    EncoderParams<U> out;
    for (const auto& k : kernels) out.kernels.push_back(k.template cast<U>());
    for (const auto& s : slopes) out.slopes.push_back(s.template cast<U>());
    for (const auto& t : bn_gamma) out.bn_gamma.push_back(t.template cast<U>());
    for (const auto& t : bn_beta) out.bn_beta.push_back(t.template cast<U>());
    for (const auto& t : bn_mean) out.bn_mean.push_back(t.template cast<U>());
    for (const auto& t : bn_var) out.bn_var.push_back(t.template cast<U>());
    out.fc_weight = fc_weight.template cast<U>();
    out.fc_bias = fc_bias.template cast<U>();
    return out;
  }
};

/// He-normal convolution kernels, fan-in scaled linear weights, zero bias,
/// constant PReLU slopes. Deterministic per seed.
template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Image batch (B x C x H x W) to embeddings (B x D), differentiable in every
/// encoder parameter that requires a gradient. In training mode batch norm
/// uses batch statistics and updates the running estimates.
template <typename T>
ad::Var<T> encode(ad::Tape<T>& tape, const EncoderConfig& config, EncoderParams<T>& params, ad::Var<T> batch,
                  bool training = true);

/// Inference-only embedding of a whole image set, processed in chunks, with
/// batch norm in evaluation mode.
Tensor<float> embed(const EncoderConfig& config, const EncoderParams<float>& params, const Tensor<float>& images,
                    std::size_t chunk = 256);

struct EmbeddingBatch {
  Tensor<float> features;           // B x D
  std::optional<std::vector<int>> labels;  // 0-based known class indices, absent for outlier data
};

enum class PrototypeInit { kGaussian, kUniform };

/// One learnable point per known class, N x D.
template <typename T>
struct PrototypeSet {
  Tensor<T> points;

  std::size_t classes() const { return points.dim(0); }
  std::size_t dim() const { return points.dim(1); }
  /// Centroid O_c of all prototypes.
  std::vector<double> centroid() const;
};

/// gaussian: i.i.d. N(0, scale^2); uniform: i.i.d. U(-scale, scale).
template <typename T>
PrototypeSet<T> init_prototypes(std::size_t classes, std::size_t dim, PrototypeInit scheme, double scale,
                                std::uint64_t seed);

/// out[b,i] = sum_d (features[b,d] - prototypes[i,d])^2
template <typename T>
ad::Var<T> sq_distances(ad::Tape<T>& tape, ad::Var<T> features, ad::Var<T> prototypes);

}  // namespace protoosr
