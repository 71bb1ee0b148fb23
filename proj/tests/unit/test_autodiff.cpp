#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "protoosr/autodiff.hpp"
#include "protoosr/random.hpp"

using namespace protoosr;
using ad::Tape;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

template <typename T>
Tensor<T> integer_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(static_cast<int>(rng.below(7)) - 3);
  return t;
}

double check(const ad::ScalarFn& fn, std::vector<Tensor<double>*> params) {
  return ad::grad_check(fn, params).max_rel_error;
}

}  // namespace

TEST_CASE("linear forward and gradient") {
  Tape<double> tape;
  Tensor<double> x(Shape{1, 2}, {1.0, 2.0});
  Tensor<double> w(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor<double> b(Shape{2}, {0.5, -0.5});
  auto y = ad::linear(tape, tape.param(x), tape.param(w), tape.param(b));
  CHECK(y.values()[0] == 1.5);
  CHECK(y.values()[1] == 1.5);

  auto x2 = random_tensor({3, 5}, 1), w2 = random_tensor({4, 5}, 2), b2 = random_tensor({4}, 3);
  const auto err = check(
      [&](Tape<double>& t) { return ad::sum(t, ad::linear(t, t.param(x2), t.param(w2), t.param(b2))); },
      {&x2, &w2, &b2});
  CHECK(err < 1e-9);
}

TEST_CASE("conv2d matches the loop oracle") {
  SUBCASE("1x1 kernel of value 2 doubles the input") {
    Tape<double> tape;
    auto x = random_tensor({1, 1, 3, 3}, 4);
    Tensor<double> k(Shape{1, 1, 1, 1}, 2.0);
    auto y = ad::conv2d(tape, tape.param(x), tape.param(k), 1, 0);
    for (std::size_t i = 0; i < 9; ++i) CHECK(y.values()[i] == 2.0 * x[i]);
  }
  SUBCASE("3x3 ones kernel over ones with padding 1 counts neighbours") {
    Tape<double> tape;
    Tensor<double> x(Shape{1, 1, 3, 3}, 1.0), k(Shape{1, 1, 3, 3}, 1.0);
    auto y = ad::conv2d(tape, tape.param(x), tape.param(k), 1, 1);
    const double expect[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
    for (std::size_t i = 0; i < 9; ++i) CHECK(y.values()[i] == expect[i]);
  }
  SUBCASE("exact on integer-valued inputs for every shape up to 4x4x16x16") {
    // Integer products and sums are exact in float, so any summation order
    // must reproduce the oracle bit for bit.
    std::uint64_t seed = 10;
    for (std::size_t b : {1, 4})
      for (std::size_t c : {1, 2, 4})
        for (std::size_t hw : {3, 7, 16})
          for (std::size_t f : {1, 3, 4})
            for (std::size_t pad : {0, 1}) {
              auto x = integer_tensor<float>({b, c, hw, hw}, ++seed);
              auto k = integer_tensor<float>({f, c, 3, 3}, ++seed);
              Tape<float> tape(false);
              auto y = ad::conv2d(tape, tape.constant(x), tape.constant(k), 1, pad);
              CHECK(y.tensor() == oracle::conv2d(x, k, 1, pad));
            }
  }
  SUBCASE("random real inputs agree to rounding") {
    auto x = random_tensor({2, 3, 9, 9}, 21), k = random_tensor({4, 3, 3, 3}, 22);
    Tape<double> tape(false);
    auto y = ad::conv2d(tape, tape.constant(x), tape.constant(k), 2, 1);
    const auto ref = oracle::conv2d(x, k, 2, 1);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  SUBCASE("gradient") {
    auto x = random_tensor({2, 2, 5, 5}, 31), k = random_tensor({3, 2, 3, 3}, 32);
    const auto err = check([&](Tape<double>& t) {
      auto y = ad::conv2d(t, t.param(x), t.param(k), 1, 1);
      return ad::sum(t, ad::mul(t, y, y));
    }, {&x, &k});
    CHECK(err < 1e-6);
  }
  SUBCASE("channel mismatch is a dimension error") {
    Tape<double> tape;
    Tensor<double> x(Shape{1, 2, 4, 4}), k(Shape{1, 3, 3, 3});
    CHECK_THROWS_AS(ad::conv2d(tape, tape.param(x), tape.param(k), 1, 1), DimensionError);
  }
}

TEST_CASE("prelu") {
  Tape<double> tape;
  Tensor<double> x(Shape{2}, {2.0, -2.0}), s(Shape{1}, 0.25);
  auto y = ad::prelu(tape, tape.param(x), tape.param(s));
  CHECK(y.values()[0] == 2.0);
  CHECK(y.values()[1] == -0.5);

  Tensor<double> neg(Shape{1}, -1.0), zero(Shape{1}, 0.0);
  CHECK(ad::prelu(tape, tape.param(neg), tape.param(zero)).values()[0] == 0.0);

  auto xr = random_tensor({2, 3, 4, 4}, 41);
  Tensor<double> slope(Shape{3}, 0.1);
  const auto err = check([&](Tape<double>& t) {
    auto y2 = ad::prelu(t, t.param(xr), t.param(slope));
    return ad::sum(t, ad::mul(t, y2, y2));
  }, {&xr, &slope});
  CHECK(err < 1e-6);

  Tensor<double> bad(Shape{2}, 0.1);
  CHECK_THROWS_AS(ad::prelu(tape, tape.param(xr), tape.param(bad)), DimensionError);
}

TEST_CASE("maxpool2d") {
  SUBCASE("maximum of a 2x2 window") {
    Tape<double> tape;
    Tensor<double> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(ad::maxpool2d(tape, tape.param(x), 2, 2).values()[0] == 4.0);
  }
  SUBCASE("constant input routes the gradient to the first element") {
    Tape<double> tape;
    Tensor<double> x(Shape{1, 1, 4, 4}, 1.0);
    x.set_requires_grad(true);
    auto y = ad::maxpool2d(tape, tape.param(x), 2, 2);
    tape.backprop(ad::sum(tape, y));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(x.grad()[i * 4 + j] == ((i % 2 == 0 && j % 2 == 0) ? 1.0 : 0.0));
  }
  SUBCASE("random 1x1x6x6 against the oracle") {
    auto x = random_tensor({1, 1, 6, 6}, 51);
    Tape<double> tape(false);
    CHECK(ad::maxpool2d(tape, tape.constant(x), 2, 2).tensor() == oracle::maxpool2d(x, 2, 2));
  }
  SUBCASE("window larger than input") {
    Tape<double> tape;
    Tensor<double> x(Shape{1, 1, 2, 2});
    CHECK_THROWS_AS(ad::maxpool2d(tape, tape.param(x), 3, 1), DimensionError);
  }
}

TEST_CASE("batchnorm2d gradient in training mode") {
  auto x = random_tensor({4, 3, 3, 3}, 61), g = random_tensor({3}, 62, 0.5, 1.5), b = random_tensor({3}, 63);
  auto w = random_tensor({4, 3, 3, 3}, 64);
  Tensor<double> mean(Shape{3}), var(Shape{3}, 1.0);
  const auto err = check([&](Tape<double>& t) {
    auto y = ad::batchnorm2d(t, t.param(x), t.param(g), t.param(b), mean, var, true);
    return ad::sum(t, ad::mul(t, ad::mul(t, y, y), t.constant(w)));
  }, {&x, &g, &b});
  CHECK(err < 1e-6);
}

TEST_CASE("batchnorm2d normalizes batch statistics and tracks running estimates") {
  auto x = random_tensor({8, 2, 4, 4}, 71, -3.0, 5.0);
  Tensor<double> g(Shape{2}, 1.0), b(Shape{2}, 0.0), mean(Shape{2}), var(Shape{2}, 1.0);
  Tape<double> tape(false);
  auto y = ad::batchnorm2d(tape, tape.constant(x), tape.param(g), tape.param(b), mean, var, true, 1.0);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double s = 0, ss = 0, xs = 0, xss = 0;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t p = 0; p < 16; ++p) {
        const auto i = (n * 2 + ch) * 16 + p;
        s += y.values()[i];
        ss += y.values()[i] * y.values()[i];
        xs += x[i];
        xss += x[i] * x[i];
      }
    CHECK(std::abs(s / 128) < 1e-12);
    CHECK(ss / 128 == doctest::Approx(1.0).epsilon(1e-4));
    // momentum 1 copies the batch mean and unbiased variance
    CHECK(mean[ch] == doctest::Approx(xs / 128).epsilon(1e-12));
    CHECK(var[ch] == doctest::Approx((xss - xs * xs / 128) / 127).epsilon(1e-12));
  }
  // evaluation mode uses the stored estimates
  Tape<double> eval(false);
  auto z = ad::batchnorm2d(eval, eval.constant(x), eval.param(g), eval.param(b), mean, var, false);
  CHECK(z.values()[0] == doctest::Approx((x[0] - mean[0]) / std::sqrt(var[0] + 1e-5)));
}

TEST_CASE("backprop") {
  SUBCASE("sum gives ones") {
    auto x = random_tensor({2, 3, 4}, 81);
    x.set_requires_grad(true);
    Tape<double> tape;
    tape.backprop(ad::sum(tape, tape.param(x)));
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("sum of squares at 3 gives 6") {
    Tensor<double> x(Shape{1}, 3.0);
    x.set_requires_grad(true);
    Tape<double> tape;
    auto v = tape.param(x);
    tape.backprop(ad::sum(tape, ad::mul(tape, v, v)));
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("fan-out accumulates exactly twice a single branch") {
    auto x = random_tensor({5}, 82);
    auto single = x;
    x.set_requires_grad(true);
    single.set_requires_grad(true);
    {
      Tape<double> tape;
      auto v = tape.param(single);
      tape.backprop(ad::sum(tape, ad::mul(tape, v, v)));
    }
    Tape<double> tape;
    auto v = tape.param(x);
    auto f = ad::mul(tape, v, v);
    tape.backprop(ad::sum(tape, ad::add(tape, f, f)));
    for (std::size_t i = 0; i < 5; ++i) CHECK(x.grad()[i] == 2.0 * single.grad()[i]);
  }
  SUBCASE("non-scalar loss is rejected") {
    auto x = random_tensor({3}, 83);
    x.set_requires_grad(true);
    Tape<double> tape;
    CHECK_THROWS_AS(tape.backprop(ad::scale(tape, tape.param(x), 2.0)), UsageError);
  }
  SUBCASE("forward is bitwise deterministic") {
    auto x = random_tensor({2, 2, 6, 6}, 84), k = random_tensor({3, 2, 3, 3}, 85);
    Tape<double> a(false), b(false);
    CHECK(ad::conv2d(a, a.constant(x), a.constant(k), 1, 1).tensor() ==
          ad::conv2d(b, b.constant(x), b.constant(k), 1, 1).tensor());
  }
}

TEST_CASE("grad_check itself") {
  SUBCASE("linear function is at the precision floor") {
    auto x = random_tensor({6}, 91);
    CHECK(check([&](Tape<double>& t) { return ad::sum(t, ad::scale(t, t.param(x), 3.0)); }, {&x}) < 1e-9);
  }
  SUBCASE("x^2 at 1") {
    Tensor<double> x(Shape{1}, 1.0);
    const auto r = ad::grad_check([&](Tape<double>& t) { auto v = t.param(x); return ad::sum(t, ad::mul(t, v, v)); },
                                  std::vector<Tensor<double>*>{&x});
    CHECK(r.worst_analytic == 2.0);
    CHECK(std::abs(r.worst_numeric - 2.0) < 1e-9);
  }
  SUBCASE("non-finite output is an error") {
    Tensor<double> x(Shape{1}, -1.0);
    CHECK_THROWS_AS(ad::grad_check([&](Tape<double>& t) { return ad::sum(t, ad::sqrt_eps(t, t.param(x), 0.0)); },
                                   std::vector<Tensor<double>*>{&x}),
                    NumericError);
  }
  SUBCASE("sqrt_eps and weighted_sum") {
    auto x = random_tensor({4}, 92, 0.5, 2.0);
    const auto err = check([&](Tape<double>& t) {
      auto a = ad::sum(t, ad::sqrt_eps(t, t.param(x), 1e-12));
      auto b = ad::sum(t, ad::mul(t, t.param(x), t.param(x)));
      std::vector<ad::Var<double>> terms{a, b};
      std::vector<double> w{0.5, 2.0};
      return ad::weighted_sum<double>(t, terms, w);
    }, {&x});
    CHECK(err < 1e-8);
  }
  SUBCASE("kink-aware mode") {
    // PReLU kink 3e-6 below the evaluation point, inside the eps interval
    Tensor<double> x(Shape{1}, 3e-6), slope(Shape{1}, 0.25);
    auto fn = [&](Tape<double>& t) { return ad::sum(t, ad::prelu(t, t.param(x), t.constant(slope))); };
    const std::vector<Tensor<double>*> ps{&x};
    const auto plain = ad::grad_check(fn, ps);
    CHECK(plain.max_rel_error == doctest::Approx(0.2625).epsilon(1e-6));
    ad::GradCheckOptions opt;
    opt.kink_aware = true;
    const auto aware = ad::grad_check(fn, ps, opt);
    CHECK(aware.max_rel_error < 1e-9);
    CHECK(aware.kinks == 1);
    // a smooth function: all three estimates agree, nothing flagged
    auto y = random_tensor({5}, 93);
    const auto smooth = ad::grad_check([&](Tape<double>& t) {
      auto v = t.param(y);
      return ad::sum(t, ad::mul(t, ad::mul(t, v, v), v));
    }, std::vector<Tensor<double>*>{&y}, opt);
    CHECK(smooth.max_rel_error < 1e-8);
    CHECK(smooth.kinks == 0);
  }
}
