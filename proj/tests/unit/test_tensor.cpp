#include <doctest.h>

#include <cmath>

#include "ckan/autograd.h"
#include "ckan/errors.h"
#include "ckan/instrument.h"
#include "ckan/ops.h"
#include "ckan/parameters.h"
#include "oracles.h"

using namespace ckan;

namespace {

Tensor leaf(Shape s, std::initializer_list<double> v) {
  Tensor t(std::move(s), std::vector<double>(v));
  t.set_requires_grad(true);
  return t;
}

Tensor random_leaf(Shape s, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  return parameter(gaussian_tensor(std::move(s), sd, rng));
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("elementwise forward values") {
  Tensor a({3}, {1.0, -2.0, 0.5});
  Tensor b({3}, {4.0, 0.5, -1.0});
  CHECK(add(a, b).values()[1] == doctest::Approx(-1.5));
  CHECK(sub(a, b).values()[0] == doctest::Approx(-3.0));
  CHECK(mul(a, b).values()[2] == doctest::Approx(-0.5));
  CHECK(mul(a, Tensor::scalar(2.0)).values()[1] == doctest::Approx(-4.0));
  CHECK(abs(a).values()[1] == 2.0);
  CHECK(square(a).values()[1] == 4.0);
  CHECK(leaky_relu(a, 0.2).values()[1] == doctest::Approx(-0.4));
  CHECK(silu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(sum(a).item() == doctest::Approx(-0.5));
  CHECK(mean(a).item() == doctest::Approx(-0.5 / 3.0));
}

TEST_CASE("softplus is stable at large magnitude") {
  Tensor z({3}, {-800.0, 0.0, 800.0});
  const Tensor sp = softplus(z);
  const auto v = sp.values();
  CHECK(v[0] == doctest::Approx(0.0));
  CHECK(v[1] == doctest::Approx(std::log(2.0)));
  CHECK(v[2] == doctest::Approx(800.0));
}

TEST_CASE("shape mismatches are rejected") {
  Tensor a({2, 3}), b({3, 2});
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(matmul(a, Tensor({2, 2})), DimensionError);
  CHECK_THROWS_AS(reshape(a, {5}), DimensionError);
  CHECK_THROWS_AS(permute(a, {0, 0}), DimensionError);
  CHECK_THROWS_AS(concat({a, b}, 0), DimensionError);
}

TEST_CASE("matmul matches a triple loop and counts MACs") {
  Rng rng(1);
  Tensor a = gaussian_tensor({5, 7}, 1.0, rng), b = gaussian_tensor({7, 3}, 1.0, rng);
  auto& c = instrument::registry().counter(instrument::kMatmulMacs);
  const auto before = c.value();
  Tensor y = matmul(a, b);
  CHECK(c.value() - before == 5 * 7 * 3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += a.values()[i * 7 + k] * b.values()[k * 3 + j];
      CHECK(std::abs(y.values()[i * 3 + j] - s) < 1e-12);
    }
}

TEST_CASE("permute and concat move values") {
  Tensor a({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor t = permute(a, {1, 0});
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.values()[1] == 3.0);
  Tensor c = concat({a, a}, 1);
  CHECK(c.shape() == Shape{2, 6});
  CHECK(c.values()[3] == 0.0);
  CHECK(c.values()[6] == 3.0);
}

TEST_CASE("non-finite results raise NumericError") {
  Tensor a({1}, {1e308});
  CHECK_THROWS_AS(scale(a, 10.0), NumericError);
}

TEST_CASE("gradients of every op match finite differences") {
  Tensor a = random_leaf({3, 4}, 2), b = random_leaf({3, 4}, 3), m = random_leaf({4, 2}, 4);
  Tensor g = random_leaf({4}, 5), bias = random_leaf({4}, 6), v = random_leaf({4}, 7);
  auto f = [&] {
    Tensor t = add(mul(a, b), sub(sigmoid(a), tanh(b)));
    t = add(t, softplus(scale(a, 0.7)));
    t = add(t, silu(b));
    t = add(t, leaky_relu(add_scalar(a, 0.3), 0.1));
    t = add(t, abs(add_scalar(b, 5.0)));
    t = layer_norm_rows(add_row_vector(t, v), g, bias, 1e-5);
    Tensor p = matmul(t, m);
    Tensor q = linear(t, transpose(permute(reshape(m, {2, 4}), {1, 0})));
    Tensor r = concat({square(p), q}, 1);
    return add(mean(r), scale(sum(mul(r, Tensor::scalar(0.3))), 0.1));
  };
  auto res = oracle::check_gradients(f, {a, b, m, g, bias, v}, 1e-6, 24, 1e-3);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("backward accumulates into leaves and releases history") {
  Tensor x = leaf({2}, {1.0, 2.0});
  Tensor y = sum(square(x));
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  Tensor z = sum(x);
  z.backward();
  CHECK(x.grad()[1] == doctest::Approx(5.0));
  CHECK(y.is_leaf());
}

TEST_CASE("unconnected leaves receive nothing") {
  Tensor x = leaf({1}, {1.0}), u = leaf({1}, {3.0});
  sum(x).backward();
  CHECK_FALSE(u.has_grad());
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x = leaf({2}, {1.0, 2.0});
  {
    NoGradGuard g;
    Tensor y = square(x);
    CHECK(y.is_leaf());
    CHECK_FALSE(grad_enabled());
  }
  CHECK(grad_enabled());
  CHECK_FALSE(square(x).is_leaf());
}

TEST_CASE("tape lists producers before consumers") {
  Tensor x = leaf({2}, {1.0, 2.0});
  Tensor h = square(x);
  Tensor y = sum(add(h, sigmoid(h)));
  GradTape tape = build_tape(y);
  REQUIRE(tape.entries.size() == 4);
  CHECK(tape.entries.back().op == "sum");
  for (std::size_t i = 0; i < tape.entries.size(); ++i)
    for (auto p : tape.entries[i].operands) CHECK(p < i);
}

TEST_CASE("mutable_values bumps the version") {
  Tensor t({2});
  const auto v0 = t.version();
  t.mutable_values()[0] = 1.0;
  CHECK(t.version() > v0);
}

}  // TEST_SUITE
