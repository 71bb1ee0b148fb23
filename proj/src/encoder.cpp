#include "protoosr/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "protoosr/random.hpp"

namespace protoosr {

void EncoderConfig::validate() const {
  if (stages.empty()) throw UsageError("encoder needs at least one convolution stage");
  if (embedding_dim < 2) throw UsageError("embedding dimension must be at least 2");
  if (channels == 0) throw UsageError("encoder input needs at least one channel");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw UsageError("batch norm momentum must lie in (0, 1]");
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i] == 0) throw UsageError("encoder stage " + std::to_string(i) + " has zero filters");
    if (h < 2 || w < 2) {
      throw DimensionError("input " + std::to_string(height) + "x" + std::to_string(width) + " too small for " +
                           std::to_string(stages.size()) + " pooling stages");
    }
    h /= 2;
    w /= 2;
  }
}

std::size_t EncoderConfig::final_height() const {
  std::size_t h = height;
  for (std::size_t i = 0; i < stages.size(); ++i) h /= 2;
  return h;
}

std::size_t EncoderConfig::final_width() const {
  std::size_t w = width;
  for (std::size_t i = 0; i < stages.size(); ++i) w /= 2;
  return w;
}

std::size_t EncoderConfig::flat_features() const { return stages.back() * final_height() * final_width(); }

template <typename T>
std::vector<Tensor<T>*> EncoderParams<T>::tensors() {
  std::vector<Tensor<T>*> out;
  for (auto& k : kernels) out.push_back(&k);
  for (auto& s : slopes) out.push_back(&s);
  for (auto& g : bn_gamma) out.push_back(&g);
  for (auto& b : bn_beta) out.push_back(&b);
  out.push_back(&fc_weight);
  out.push_back(&fc_bias);
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> EncoderParams<T>::tensors() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& k : kernels) out.push_back(&k);
  for (const auto& s : slopes) out.push_back(&s);
  for (const auto& g : bn_gamma) out.push_back(&g);
  for (const auto& b : bn_beta) out.push_back(&b);
  out.push_back(&fc_weight);
  out.push_back(&fc_bias);
  return out;
}

template <typename T>
std::vector<std::string> EncoderParams<T>::names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kernels.size(); ++i) out.push_back("conv" + std::to_string(i) + ".kernel");
  for (std::size_t i = 0; i < slopes.size(); ++i) out.push_back("conv" + std::to_string(i) + ".slope");
  for (std::size_t i = 0; i < bn_gamma.size(); ++i) out.push_back("bn" + std::to_string(i) + ".gamma");
  for (std::size_t i = 0; i < bn_beta.size(); ++i) out.push_back("bn" + std::to_string(i) + ".beta");
  out.emplace_back("fc.weight");
  out.emplace_back("fc.bias");
  return out;
}

template <typename T>
std::vector<Tensor<T>*> EncoderParams<T>::buffers() {
  std::vector<Tensor<T>*> out;
  for (auto& m : bn_mean) out.push_back(&m);
  for (auto& v : bn_var) out.push_back(&v);
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> EncoderParams<T>::buffers() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& m : bn_mean) out.push_back(&m);
  for (const auto& v : bn_var) out.push_back(&v);
  return out;
}

template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "encoder"));
  EncoderParams<T> p;
  std::size_t in_ch = config.channels;
  for (auto filters : config.stages) {
    Tensor<T> k(Shape{filters, in_ch, 3, 3});
    const double std = std::sqrt(2.0 / static_cast<double>(in_ch * 9));
    for (auto& v : k.values()) v = static_cast<T>(rng.normal() * std);
    p.kernels.push_back(std::move(k));
    p.slopes.emplace_back(Shape{filters}, static_cast<T>(config.slope_init));
    if (config.batch_norm) {
      p.bn_gamma.emplace_back(Shape{filters}, T{1});
      p.bn_beta.emplace_back(Shape{filters}, T{0});
      p.bn_mean.emplace_back(Shape{filters}, T{0});
      p.bn_var.emplace_back(Shape{filters}, T{1});
    }
    in_ch = filters;
  }
  const auto flat = config.flat_features();
  p.fc_weight = Tensor<T>(Shape{config.embedding_dim, flat});
  const double std = std::sqrt(1.0 / static_cast<double>(flat));
  for (auto& v : p.fc_weight.values()) v = static_cast<T>(rng.normal() * std);
  p.fc_bias = Tensor<T>(Shape{config.embedding_dim});
  return p;
}

template <typename T>
ad::Var<T> encode(ad::Tape<T>& tape, const EncoderConfig& config, EncoderParams<T>& params, ad::Var<T> batch,
                  bool training) {
  const auto& s = batch.shape();
  if (s.size() != 4 || s[1] != config.channels || s[2] != config.height || s[3] != config.width) {
    throw DimensionError("encoder expects Bx" + std::to_string(config.channels) + "x" +
                         std::to_string(config.height) + "x" + std::to_string(config.width) + " images, got " +
                         shape_str(s));
  }
  if (params.kernels.size() != config.stages.size()) {
    throw DimensionError("encoder parameters do not match the configured stage count");
  }
  const bool bn = config.batch_norm;
  if (bn != !params.bn_gamma.empty() || (bn && params.bn_gamma.size() != config.stages.size())) {
    throw DimensionError("encoder parameters do not match the batch-norm setting");
  }
  auto x = batch;
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    x = ad::conv2d(tape, x, tape.param(params.kernels[i]), 1, 1);
    if (bn) {
      x = ad::batchnorm2d(tape, x, tape.param(params.bn_gamma[i]), tape.param(params.bn_beta[i]), params.bn_mean[i],
                          params.bn_var[i], training, static_cast<T>(config.bn_momentum));
    }
    x = ad::prelu(tape, x, tape.param(params.slopes[i]));
    x = ad::maxpool2d(tape, x, 2, 2);
  }
  const auto b = s[0];
  x = ad::reshape(tape, x, Shape{b, config.flat_features()});
  return ad::linear(tape, x, tape.param(params.fc_weight), tape.param(params.fc_bias));
}

Tensor<float> embed(const EncoderConfig& config, const EncoderParams<float>& params, const Tensor<float>& images,
                    std::size_t chunk) {
  if (images.rank() != 4) throw DimensionError("embed expects a BxCxHxW image tensor");
  const auto total = images.dim(0);
  const auto per = images.size() / std::max<std::size_t>(total, 1);
  Tensor<float> out(Shape{total, config.embedding_dim});
  // Evaluation mode never writes to parameters or running statistics.
  auto& mutable_params = const_cast<EncoderParams<float>&>(params);
  for (std::size_t start = 0; start < total; start += chunk) {
    const auto n = std::min(chunk, total - start);
    Tensor<float> part(Shape{n, images.dim(1), images.dim(2), images.dim(3)},
                       std::vector<float>(images.data() + start * per, images.data() + (start + n) * per));
    ad::Tape<float> tape(false);
    auto f = encode(tape, config, mutable_params, tape.constant(std::move(part)), false);
    std::copy(f.values().begin(), f.values().end(), out.data() + start * config.embedding_dim);
  }
  return out;
}

template <typename T>
std::vector<double> PrototypeSet<T>::centroid() const {
  const auto n = classes(), d = dim();
  std::vector<double> c(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) c[k] += static_cast<double>(points[i * d + k]);
  for (auto& v : c) v /= static_cast<double>(n);
  return c;
}

template <typename T>
PrototypeSet<T> init_prototypes(std::size_t classes, std::size_t dim, PrototypeInit scheme, double scale,
                                std::uint64_t seed) {
  if (classes < 2) throw ProtocolError("open-set training needs at least 2 known classes");
  if (dim < 2) throw UsageError("prototype dimension must be at least 2");
  Rng rng(derive_seed(seed, "prototypes"));
  PrototypeSet<T> set{Tensor<T>(Shape{classes, dim})};
  for (auto& v : set.points.values()) {
    const double draw = scheme == PrototypeInit::kGaussian ? rng.normal() : rng.uniform(-1.0, 1.0);
    v = static_cast<T>(draw * scale);
  }
  return set;
}

template <typename T>
ad::Var<T> sq_distances(ad::Tape<T>& tape, ad::Var<T> features, ad::Var<T> prototypes) {
  if (features.shape().size() != 2 || prototypes.shape().size() != 2 || features.dim(1) != prototypes.dim(1)) {
    throw DimensionError("sq_distances: features " + shape_str(features.shape()) + " vs prototypes " +
                         shape_str(prototypes.shape()));
  }
  const auto b = features.dim(0), n = prototypes.dim(0), d = features.dim(1);
  const T* f = features.tensor().data();
  const T* p = prototypes.tensor().data();
  Tensor<T> out(Shape{b, n});
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      T acc{0};
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = f[r * d + k] - p[i * d + k];
        acc += diff * diff;
      }
      out[r * n + i] = acc;
    }
  }
  auto result = tape.emit(std::move(out), features.requires_grad() || prototypes.requires_grad());
  if (result.requires_grad()) {
    tape.record([=] {
      const T* fv = features.tensor().data();
      const T* pv = prototypes.tensor().data();
      auto dy = result.tensor().grad();
      for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
          const T g = T{2} * dy[r * n + i];
          if (g == T{0}) continue;
          for (std::size_t k = 0; k < d; ++k) {
            const T diff = g * (fv[r * d + k] - pv[i * d + k]);
            if (features.requires_grad()) features.tensor().grad()[r * d + k] += diff;
            if (prototypes.requires_grad()) prototypes.tensor().grad()[i * d + k] -= diff;
          }
        }
      }
    });
  }
  return result;
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template struct PrototypeSet<float>;
template struct PrototypeSet<double>;
template EncoderParams<float> init_encoder<float>(const EncoderConfig&, std::uint64_t);
template EncoderParams<double> init_encoder<double>(const EncoderConfig&, std::uint64_t);
template ad::Var<float> encode(ad::Tape<float>&, const EncoderConfig&, EncoderParams<float>&, ad::Var<float>, bool);
template ad::Var<double> encode(ad::Tape<double>&, const EncoderConfig&, EncoderParams<double>&, ad::Var<double>,
                                bool);
template PrototypeSet<float> init_prototypes<float>(std::size_t, std::size_t, PrototypeInit, double, std::uint64_t);
template PrototypeSet<double> init_prototypes<double>(std::size_t, std::size_t, PrototypeInit, double,
                                                      std::uint64_t);
template ad::Var<float> sq_distances(ad::Tape<float>&, ad::Var<float>, ad::Var<float>);
template ad::Var<double> sq_distances(ad::Tape<double>&, ad::Var<double>, ad::Var<double>);

}  // namespace protoosr
