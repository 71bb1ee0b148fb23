#include "protoosr/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "protoosr/random.hpp"

namespace protoosr::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_plane() const { return out_h * out_w; }
};

// Gathers the receptive fields of one sample into a (C*Kh*Kw) x (Ho*Wo) matrix.
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* cols) {
  const auto plane = g.out_plane();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix < static_cast<std::ptrdiff_t>(g.width);
            row[oy * g.out_w + ox] = inside ? image[(c * g.height + iy) * g.width + ix] : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto the image.
template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* image) {
  const auto plane = g.out_plane();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            image[(c * g.height + iy) * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  value.set_requires_grad(false);
  owned_.push_back(std::move(value));
  return Var<T>(&owned_.back());
}

template <typename T>
Var<T> Tape<T>::emit(Tensor<T> value, bool needs_grad) {
  value.set_requires_grad(needs_grad && recording_);
  owned_.push_back(std::move(value));
  return Var<T>(&owned_.back());
}

template <typename T>
void Tape<T>::record(std::function<void()> backward) {
  if (recording_) backward_.push_back(std::move(backward));
}

template <typename T>
void Tape<T>::backprop(Var<T> loss) {
  if (!recording_) throw UsageError("backprop on a tape that was not recording");
  if (consumed_) throw UsageError("backprop called twice on the same tape");
  if (loss.tensor().size() != 1) {
    throw UsageError("backprop needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  consumed_ = true;
  if (!loss.requires_grad()) return;
  loss.tensor().grad()[0] = T{1};
  for (auto it = backward_.rbegin(); it != backward_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// linear

template <typename T>
Var<T> linear(Tape<T>& tape, Var<T> input, Var<T> weight, Var<T> bias) {
  require(input.shape().size() == 2 && weight.shape().size() == 2 && bias.shape().size() == 1,
          "linear expects input BxI, weight OxI, bias O");
  const auto b = input.dim(0), in = input.dim(1), o = weight.dim(0);
  require(weight.dim(1) == in, "linear: input has " + std::to_string(in) + " features, weight expects " +
                                   std::to_string(weight.dim(1)));
  require(bias.dim(0) == o, "linear: bias length does not match output width");

  Tensor<T> out(Shape{b, o});
  {
    ConstMatMap<T> x(input.tensor().data(), b, in);
    ConstMatMap<T> w(weight.tensor().data(), o, in);
    MatMap<T> y(out.data(), b, o);
    y.noalias() = x * w.transpose();
    const T* bv = bias.tensor().data();
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t c = 0; c < o; ++c) y(r, c) += bv[c];
  }
  const bool needs = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  auto result = tape.emit(std::move(out), needs);
  if (result.requires_grad()) {
    tape.record([=] {
      ConstMatMap<T> dy(result.tensor().grad().data(), b, o);
      if (input.requires_grad()) {
        MatMap<T> dx(input.tensor().grad().data(), b, in);
        ConstMatMap<T> w(weight.tensor().data(), o, in);
        dx.noalias() += dy * w;
      }
      if (weight.requires_grad()) {
        MatMap<T> dw(weight.tensor().grad().data(), o, in);
        ConstMatMap<T> x(input.tensor().data(), b, in);
        dw.noalias() += dy.transpose() * x;
      }
      if (bias.requires_grad()) {
        auto db = bias.tensor().grad();
        for (std::size_t r = 0; r < b; ++r)
          for (std::size_t c = 0; c < o; ++c) db[c] += dy(r, c);
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Var<T> conv2d(Tape<T>& tape, Var<T> input, Var<T> kernel, std::size_t stride, std::size_t padding) {
  require(input.shape().size() == 4, "conv2d expects a BxCxHxW input, got " + shape_str(input.shape()));
  require(kernel.shape().size() == 4, "conv2d expects an FxCxKhxKw kernel, got " + shape_str(kernel.shape()));
  require(stride >= 1, "conv2d stride must be at least 1");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2),
                 kernel.dim(3), stride, padding, 0, 0};
  require(kernel.dim(1) == g.channels, "conv2d: kernel channels " + std::to_string(kernel.dim(1)) +
                                           " != input channels " + std::to_string(g.channels));
  require(g.kh <= g.height + 2 * padding && g.kw <= g.width + 2 * padding,
          "conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " + shape_str(input.shape()));
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;

  const auto plane = g.out_plane(), patch = g.patch(), in_sample = g.channels * g.height * g.width;
  Tensor<T> out(Shape{g.batch, g.filters, g.out_h, g.out_w});
  std::vector<T> cols(patch * plane);
  ConstMatMap<T> k(kernel.tensor().data(), g.filters, patch);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, input.tensor().data() + b * in_sample, cols.data());
    ConstMatMap<T> c(cols.data(), patch, plane);
    MatMap<T> y(out.data() + b * g.filters * plane, g.filters, plane);
    y.noalias() = k * c;
  }

  auto result = tape.emit(std::move(out), input.requires_grad() || kernel.requires_grad());
  if (result.requires_grad()) {
    tape.record([=] {
      std::vector<T> buf(patch * plane);
      ConstMatMap<T> kmat(kernel.tensor().data(), g.filters, patch);
      for (std::size_t b = 0; b < g.batch; ++b) {
        ConstMatMap<T> dy(result.tensor().grad().data() + b * g.filters * plane, g.filters, plane);
        if (kernel.requires_grad()) {
          im2col(g, input.tensor().data() + b * in_sample, buf.data());
          ConstMatMap<T> c(buf.data(), patch, plane);
          MatMap<T> dk(kernel.tensor().grad().data(), g.filters, patch);
          dk.noalias() += dy * c.transpose();
        }
        if (input.requires_grad()) {
          MatMap<T> dc(buf.data(), patch, plane);
          dc.noalias() = kmat.transpose() * dy;
          col2im(g, buf.data(), input.tensor().grad().data() + b * in_sample);
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// prelu

template <typename T>
Var<T> prelu(Tape<T>& tape, Var<T> input, Var<T> slope) {
  const auto& shape = input.shape();
  const std::size_t axis = shape.size() >= 2 ? 1 : 0;
  const std::size_t channels = shape.empty() ? 1 : shape[axis];
  const std::size_t count = slope.tensor().size();
  require(count == 1 || count == channels, "prelu: " + std::to_string(count) + " slopes for " +
                                               std::to_string(channels) + " channels");
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const auto channel_of = [=](std::size_t i) { return count == 1 ? 0 : (i / inner) % channels; };

  const auto& x = input.tensor();
  const auto& a = slope.tensor();
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : a[channel_of(i)] * x[i];

  auto result = tape.emit(std::move(out), input.requires_grad() || slope.requires_grad());
  if (result.requires_grad()) {
    tape.record([=] {
      const auto& xv = input.tensor();
      const auto& av = slope.tensor();
      auto dy = result.tensor().grad();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const auto c = channel_of(i);
        const bool pos = xv[i] > T{0};
        if (input.requires_grad()) input.tensor().grad()[i] += pos ? dy[i] : av[c] * dy[i];
        if (slope.requires_grad() && !pos) slope.tensor().grad()[c] += xv[i] * dy[i];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// maxpool2d

template <typename T>
Var<T> maxpool2d(Tape<T>& tape, Var<T> input, std::size_t window, std::size_t stride) {
  const auto& shape = input.shape();
  require(shape.size() == 4, "maxpool2d expects a BxCxHxW input, got " + shape_str(shape));
  require(window >= 1 && stride >= 1, "maxpool2d window and stride must be positive");
  const auto planes = shape[0] * shape[1], h = shape[2], w = shape[3];
  require(window <= h && window <= w,
          "maxpool2d: window " + std::to_string(window) + " exceeds input " + shape_str(shape));
  const auto oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;

  Tensor<T> out(Shape{shape[0], shape[1], oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const T* x = input.tensor().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + (oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const auto idx = p * h * w + (oy * stride + ky) * w + (ox * stride + kx);
            if (x[idx] > x[best]) best = idx;
          }
        }
        const auto o = (p * oh + oy) * ow + ox;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }

  auto result = tape.emit(std::move(out), input.requires_grad());
  if (result.requires_grad()) {
    tape.record([=, argmax = std::move(argmax)] {
      auto dy = result.tensor().grad();
      auto dx = input.tensor().grad();
      for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// batchnorm2d

template <typename T>
Var<T> batchnorm2d(Tape<T>& tape, Var<T> input, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                   Tensor<T>& running_var, bool training, T momentum, T eps) {
  const auto& shape = input.shape();
  require(shape.size() == 4, "batchnorm2d expects a BxCxHxW input, got " + shape_str(shape));
  const auto b = shape[0], c = shape[1], plane = shape[2] * shape[3];
  require(gamma.tensor().size() == c && beta.tensor().size() == c && running_mean.size() == c &&
              running_var.size() == c,
          "batchnorm2d: per-channel tensors must have " + std::to_string(c) + " entries");
  const auto m = b * plane;
  const T* x = input.tensor().data();

  std::vector<T> mean(c), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0.0;
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t p = 0; p < plane; ++p) s += static_cast<double>(x[(n * c + ch) * plane + p]);
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = static_cast<double>(x[(n * c + ch) * plane + p]) - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(m);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
      running_mean[ch] = (T{1} - momentum) * running_mean[ch] + momentum * static_cast<T>(mu);
      running_var[ch] = (T{1} - momentum) * running_var[ch] + momentum * static_cast<T>(unbiased);
    } else {
      mean[ch] = running_mean[ch];
      inv_std[ch] = T{1} / std::sqrt(running_var[ch] + eps);
    }
  }

  Tensor<T> normalized(shape);
  Tensor<T> out(shape);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T g = gamma.tensor()[ch], bt = beta.tensor()[ch];
      for (std::size_t p = 0; p < plane; ++p) {
        const auto i = (n * c + ch) * plane + p;
        normalized[i] = (x[i] - mean[ch]) * inv_std[ch];
        out[i] = g * normalized[i] + bt;
      }
    }
  }

  auto result = tape.emit(std::move(out), input.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  if (result.requires_grad()) {
    tape.record([=, xhat = std::move(normalized), inv_std = std::move(inv_std)] {
      auto dy = result.tensor().grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        T sum_dy{0}, sum_dy_xhat{0};
        for (std::size_t n = 0; n < b; ++n) {
          for (std::size_t p = 0; p < plane; ++p) {
            const auto i = (n * c + ch) * plane + p;
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * xhat[i];
          }
        }
        if (gamma.requires_grad()) gamma.tensor().grad()[ch] += sum_dy_xhat;
        if (beta.requires_grad()) beta.tensor().grad()[ch] += sum_dy;
        if (!input.requires_grad()) continue;
        const T g = gamma.tensor()[ch];
        auto dx = input.tensor().grad();
        const T inv_m = T{1} / static_cast<T>(m);
        for (std::size_t n = 0; n < b; ++n) {
          for (std::size_t p = 0; p < plane; ++p) {
            const auto i = (n * c + ch) * plane + p;
            if (training) {
              dx[i] += g * inv_std[ch] * (dy[i] - inv_m * sum_dy - xhat[i] * inv_m * sum_dy_xhat);
            } else {
              dx[i] += g * inv_std[ch] * dy[i];
            }
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// elementwise and reductions

template <typename T>
Var<T> reshape(Tape<T>& tape, Var<T> input, Shape shape) {
  Tensor<T> out(std::move(shape), std::vector<T>(input.values().begin(), input.values().end()));
  auto result = tape.emit(std::move(out), input.requires_grad());
  if (result.requires_grad()) {
    tape.record([=] {
      auto dy = result.tensor().grad();
      auto dx = input.tensor().grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    });
  }
  return result;
}

template <typename T>
Var<T> add(Tape<T>& tape, Var<T> a, Var<T> b) {
  require(a.shape() == b.shape(), "add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.tensor()[i] + b.tensor()[i];
  auto result = tape.emit(std::move(out), a.requires_grad() || b.requires_grad());
  if (result.requires_grad()) {
    tape.record([=] {
      auto dy = result.tensor().grad();
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (a.requires_grad()) a.tensor().grad()[i] += dy[i];
        if (b.requires_grad()) b.tensor().grad()[i] += dy[i];
      }
    });
  }
  return result;
}

template <typename T>
Var<T> mul(Tape<T>& tape, Var<T> a, Var<T> b) {
  require(a.shape() == b.shape(), "mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.tensor()[i] * b.tensor()[i];
  auto result = tape.emit(std::move(out), a.requires_grad() || b.requires_grad());
  if (result.requires_grad()) {
    tape.record([=] {
      auto dy = result.tensor().grad();
      for (std::size_t i = 0; i < dy.size(); ++i) {
        const T av = a.tensor()[i], bv = b.tensor()[i];
        if (a.requires_grad()) a.tensor().grad()[i] += dy[i] * bv;
        if (b.requires_grad()) b.tensor().grad()[i] += dy[i] * av;
      }
    });
  }
  return result;
}

template <typename T>
Var<T> scale(Tape<T>& tape, Var<T> a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.tensor()[i] * factor;
  auto result = tape.emit(std::move(out), a.requires_grad());
  if (result.requires_grad()) {
    tape.record([=] {
      auto dy = result.tensor().grad();
      auto dx = a.tensor().grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
    });
  }
  return result;
}

template <typename T>
Var<T> sum(Tape<T>& tape, Var<T> a) {
  T total{0};
  for (T v : a.values()) total += v;
  auto result = tape.emit(Tensor<T>::scalar(total), a.requires_grad());
  if (result.requires_grad()) {
    tape.record([=] {
      const T dy = result.tensor().grad()[0];
      for (auto& g : a.tensor().grad()) g += dy;
    });
  }
  return result;
}

template <typename T>
Var<T> sqrt_eps(Tape<T>& tape, Var<T> a, T eps) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.tensor()[i] + eps);
  auto result = tape.emit(std::move(out), a.requires_grad());
  if (result.requires_grad()) {
    tape.record([=] {
      auto dy = result.tensor().grad();
      auto dx = a.tensor().grad();
      const auto& y = result.tensor();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * T{0.5} / y[i];
    });
  }
  return result;
}

template <typename T>
Var<T> weighted_sum(Tape<T>& tape, std::span<const Var<T>> terms, std::span<const T> weights) {
  require(terms.size() == weights.size(), "weighted_sum: term/weight count mismatch");
  T total{0};
  bool needs = false;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    require(terms[k].tensor().size() == 1, "weighted_sum: terms must be scalars");
    total += weights[k] * terms[k].tensor()[0];
    needs = needs || terms[k].requires_grad();
  }
  auto result = tape.emit(Tensor<T>::scalar(total), needs);
  if (result.requires_grad()) {
    std::vector<Var<T>> ts(terms.begin(), terms.end());
    std::vector<T> ws(weights.begin(), weights.end());
    tape.record([=] {
      const T dy = result.tensor().grad()[0];
      for (std::size_t k = 0; k < ts.size(); ++k)
        if (ts[k].requires_grad()) ts[k].tensor().grad()[0] += ws[k] * dy;
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// grad_check

GradCheckResult grad_check(const ScalarFn& fn, std::span<Tensor<double>* const> params,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw UsageError("grad_check: eps must be positive");
  for (auto* p : params) p->set_requires_grad(true);

  const auto evaluate = [&fn]() {
    Tape<double> tape(false);
    const double v = fn(tape).tensor().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: function returned a non-finite value");
    return v;
  };

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    auto loss = fn(tape);
    if (!std::isfinite(loss.tensor().item())) throw NumericError("grad_check: function returned a non-finite value");
    tape.backprop(loss);
    for (auto* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());
  }

  GradCheckResult result;
  Rng rng(options.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t]->values();
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (options.max_elements_per_tensor != 0 && order.size() > options.max_elements_per_tensor) {
      rng.shuffle(order.begin(), order.end());
      order.resize(options.max_elements_per_tensor);
      std::sort(order.begin(), order.end());
    }
    for (auto i : order) {
      const double saved = values[i];
      const auto at = [&](double offset) {
        values[i] = saved + offset;
        const double v = evaluate();
        values[i] = saved;
        return v;
      };
      const double eps = options.eps;
      const double up = at(eps), down = at(-eps);
      double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[t][i];
      const double scale = std::max(1.0, std::abs(a));
      double err = std::abs(a - numeric) / scale;
      if (options.kink_aware) {
        // Second-order one-sided differences on [x, x + eps] and [x - eps, x].
        // A max-pool or PReLU switch inside one half-interval leaves the
        // other estimate intact.
        const double mid = evaluate(), up_half = at(eps / 2), down_half = at(-eps / 2);
        const double right = (-3.0 * mid + 4.0 * up_half - up) / eps;
        const double left = (3.0 * mid - 4.0 * down_half + down) / eps;
        const double central = numeric;
        for (double est : {right, left}) {
          const double e = std::abs(a - est) / scale;
          if (e < err) err = e, numeric = est;
        }
        if (std::abs(central - right) / scale > 1e-6 || std::abs(central - left) / scale > 1e-6) ++result.kinks;
      }
      ++result.elements_checked;
      if (result.elements_checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = t;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

#define PROTOOSR_INSTANTIATE(T)                                                                  \
  template class Tape<T>;                                                                        \
  template Var<T> linear(Tape<T>&, Var<T>, Var<T>, Var<T>);                                      \
  template Var<T> conv2d(Tape<T>&, Var<T>, Var<T>, std::size_t, std::size_t);                    \
  template Var<T> prelu(Tape<T>&, Var<T>, Var<T>);                                               \
  template Var<T> maxpool2d(Tape<T>&, Var<T>, std::size_t, std::size_t);                         \
  template Var<T> batchnorm2d(Tape<T>&, Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&, bool, T, T);    \
  template Var<T> reshape(Tape<T>&, Var<T>, Shape);                                              \
  template Var<T> add(Tape<T>&, Var<T>, Var<T>);                                                 \
  template Var<T> mul(Tape<T>&, Var<T>, Var<T>);                                                 \
  template Var<T> scale(Tape<T>&, Var<T>, T);                                                    \
  template Var<T> sum(Tape<T>&, Var<T>);                                                         \
  template Var<T> sqrt_eps(Tape<T>&, Var<T>, T);                                                 \
  template Var<T> weighted_sum(Tape<T>&, std::span<const Var<T>>, std::span<const T>);

PROTOOSR_INSTANTIATE(float)
PROTOOSR_INSTANTIATE(double)

#undef PROTOOSR_INSTANTIATE

}  // namespace protoosr::ad
