#include <doctest.h>

#include <cmath>

#include "protoosr/optimizer.hpp"

using namespace protoosr;

namespace {

Tensor<float> param(std::vector<float> values) {
  const Shape shape{values.size()};
  Tensor<float> t(shape, std::move(values));
  t.set_requires_grad(true);
  return t;
}

void set_grad(Tensor<float>& t, std::vector<float> g) {
  for (std::size_t i = 0; i < g.size(); ++i) t.grad()[i] = g[i];
}

}  // namespace

TEST_CASE("lr_at") {
  const LrSchedule s;
  CHECK(lr_at(s, 0) == 0.1);
  CHECK(lr_at(s, 29) == 0.1);
  CHECK(lr_at(s, 30) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(lr_at(s, 60) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_at(s, 99) == doctest::Approx(0.0001).epsilon(1e-15));
  CHECK_THROWS_AS(lr_at(s, 100), UsageError);
}

TEST_CASE("sgd_momentum_step") {
  SUBCASE("momentum 0 and lr 1 is plain descent") {
    auto p = param({1.0f, -2.0f});
    std::vector<Tensor<float>*> ps{&p};
    auto st = make_optim_state(ps, 1.0, 0.0, 0.0);
    set_grad(p, {0.5f, 0.25f});
    sgd_momentum_step(st, ps);
    CHECK(p[0] == 0.5f);
    CHECK(p[1] == -2.25f);
    CHECK(p.grad()[0] == 0.0f);  // cleared
  }
  SUBCASE("pure inertia") {
    auto p = param({0.0f});
    std::vector<Tensor<float>*> ps{&p};
    auto st = make_optim_state(ps, 0.5, 0.9, 0.0);
    st.velocity[0][0] = 2.0f;
    sgd_momentum_step(st, ps);
    CHECK(p[0] == doctest::Approx(-0.5 * 0.9 * 2.0));
  }
  SUBCASE("two steps with constant gradient") {
    auto p = param({0.0f});
    std::vector<Tensor<float>*> ps{&p};
    auto st = make_optim_state(ps, 0.1, 0.9, 0.0);
    const float g = 3.0f;
    for (int i = 0; i < 2; ++i) {
      set_grad(p, {g});
      sgd_momentum_step(st, ps);
    }
    CHECK(p[0] == doctest::Approx(-0.1 * g - 0.19 * g).epsilon(1e-6));
  }
  SUBCASE("weight decay adds wd * p to the gradient") {
    auto p = param({2.0f});
    std::vector<Tensor<float>*> ps{&p};
    auto st = make_optim_state(ps, 1.0, 0.0, 0.5);
    set_grad(p, {0.0f});
    sgd_momentum_step(st, ps);
    CHECK(p[0] == 1.0f);
  }
  SUBCASE("identical state and gradients give identical parameters") {
    auto a = param({1.0f, 2.0f}), b = param({1.0f, 2.0f});
    std::vector<Tensor<float>*> pa{&a}, pb{&b};
    auto sa = make_optim_state(pa, 0.1, 0.9, 0.0), sb = make_optim_state(pb, 0.1, 0.9, 0.0);
    for (int i = 0; i < 3; ++i) {
      set_grad(a, {0.3f, -0.7f});
      set_grad(b, {0.3f, -0.7f});
      sgd_momentum_step(sa, pa);
      sgd_momentum_step(sb, pb);
    }
    CHECK(a == b);
  }
  SUBCASE("missing gradient") {
    Tensor<float> p(Shape{2});
    std::vector<Tensor<float>*> ps{&p};
    auto st = make_optim_state(ps, 0.1, 0.9, 0.0);
    CHECK_THROWS_AS(sgd_momentum_step(st, ps), UsageError);
  }
}

TEST_CASE("clip_grad_norm") {
  auto a = param({0.0f, 0.0f}), b = param({0.0f});
  std::vector<Tensor<float>*> ps{&a, &b};
  set_grad(a, {3.0f, 0.0f});
  set_grad(b, {4.0f});
  CHECK(clip_grad_norm(ps, 10.0) == 5.0);  // below the limit: untouched
  CHECK(a.grad()[0] == 3.0f);
  CHECK(clip_grad_norm(ps, 1.0) == 5.0);
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
  CHECK_THROWS_AS(clip_grad_norm(ps, 0.0), UsageError);
}
