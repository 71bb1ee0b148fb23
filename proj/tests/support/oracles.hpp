#pragma once

// Brute-force reference implementations. Deliberately naive: direct loops,
// no shared code with the library.

#include <cmath>
#include <cstddef>
#include <vector>

#include "protoosr/tensor.hpp"

namespace oracle {

template <typename T>
protoosr::Tensor<T> conv2d(const protoosr::Tensor<T>& x, const protoosr::Tensor<T>& k, std::size_t stride,
                           std::size_t pad) {
  const auto b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const auto oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  protoosr::Tensor<T> out(protoosr::Shape{b, f, oh, ow});
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          T acc{0};
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long z = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (y < 0 || z < 0 || y >= static_cast<long>(h) || z >= static_cast<long>(w)) continue;
                acc += x[((n * c + ch) * h + y) * w + z] * k[((o * c + ch) * kh + u) * kw + v];
              }
          out[((n * f + o) * oh + i) * ow + j] = acc;
        }
  return out;
}

template <typename T>
protoosr::Tensor<T> maxpool2d(const protoosr::Tensor<T>& x, std::size_t win, std::size_t stride) {
  const auto b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = (h - win) / stride + 1, ow = (w - win) / stride + 1;
  protoosr::Tensor<T> out(protoosr::Shape{b, c, oh, ow});
  for (std::size_t p = 0; p < b * c; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        T best = x[(p * h + i * stride) * w + j * stride];
        for (std::size_t u = 0; u < win; ++u)
          for (std::size_t v = 0; v < win; ++v) best = std::max(best, x[(p * h + i * stride + u) * w + j * stride + v]);
        out[(p * oh + i) * ow + j] = best;
      }
  return out;
}

/// Twice the Mann-Whitney count: 2 per strictly-ordered pair, 1 per tie.
inline long long doubled_pair_count(const std::vector<double>& known, const std::vector<double>& unknown) {
  long long c = 0;
  for (double k : known)
    for (double u : unknown) c += k > u ? 2 : k == u ? 1 : 0;
  return c;
}

struct Confusion {
  std::vector<std::vector<long>> m;  // m[truth][prediction], slot N is unknown
};

inline std::size_t slot(int label, std::size_t n) { return label < 0 ? n : static_cast<std::size_t>(label); }

/// Macro-F1 from an explicit (N+1) x (N+1) confusion matrix.
inline double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth, std::size_t n) {
  std::vector<std::vector<long>> m(n + 1, std::vector<long>(n + 1, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) m[slot(truth[i], n)][slot(pred[i], n)]++;
  double total = 0.0;
  for (std::size_t c = 0; c <= n; ++c) {
    long row = 0, col = 0;
    for (std::size_t k = 0; k <= n; ++k) {
      row += m[c][k];
      col += m[k][c];
    }
    const long tp = m[c][c];
    if (tp == 0) continue;
    const double p = static_cast<double>(tp) / static_cast<double>(col);
    const double r = static_cast<double>(tp) / static_cast<double>(row);
    total += 2.0 * p * r / (p + r);
  }
  return total / static_cast<double>(n + 1);
}

/// Sample variance of prototype distances to their centroid, in long double.
inline long double slc(const std::vector<std::vector<double>>& protos) {
  const auto n = protos.size(), d = protos[0].size();
  std::vector<long double> c(d, 0.0L);
  for (const auto& p : protos)
    for (std::size_t k = 0; k < d; ++k) c[k] += p[k];
  for (auto& v : c) v /= static_cast<long double>(n);
  std::vector<long double> r;
  for (const auto& p : protos) {
    long double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += (p[k] - c[k]) * (p[k] - c[k]);
    r.push_back(std::sqrt(s));
  }
  long double mean = 0;
  for (auto x : r) mean += x;
  mean /= static_cast<long double>(n);
  long double var = 0;
  for (auto x : r) var += (x - mean) * (x - mean);
  return var / static_cast<long double>(n - 1);
}

}  // namespace oracle
