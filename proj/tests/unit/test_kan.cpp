#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ckan/errors.h"
#include "ckan/kan_layer.h"
#include "ckan/ops.h"
#include "oracles.h"

using namespace ckan;

namespace {

void randomize(Tensor t, Rng& rng, double sd) {
  for (double& v : t.mutable_values()) v = rng.normal(0.0, sd);
}

Tensor random_input(std::size_t n, std::size_t d, Rng& rng, double lo = -2.5, double hi = 2.5) {
  Tensor x({n, d});
  for (double& v : x.mutable_values()) v = rng.uniform(lo, hi);
  return x;
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_SUITE("kan") {

TEST_CASE("identity basis and zero coefficients") {
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.mutable_values()[i * 3 + i] = 1.0;
  auto f = FactorizedLinear::from_bases(1, 1, {eye});
  f.coefficients().mutable_values()[0] = 1.0;
  Tensor w = f.materialize();
  CHECK(max_diff(w.values(), eye.values()) == 0.0);

  f.coefficients().mutable_values()[0] = 0.0;
  w = f.materialize();
  for (double v : w.values()) CHECK(v == 0.0);
}

TEST_CASE("materialized weight matches the double-loop sum") {
  Rng rng(11);
  FactorizedLinear f(7, 5, 3, 4, 99);
  randomize(f.coefficients(), rng, 1.0);
  const auto naive = oracle::materialize_naive(f);
  CHECK(max_diff(f.materialize().values(), naive) < 1e-12);

  // explicit dense bases too
  std::vector<Tensor> bases;
  for (int i = 0; i < 6; ++i) {
    Tensor m({4, 3});
    randomize(m, rng, 1.0);
    bases.push_back(m);
  }
  auto g = FactorizedLinear::from_bases(2, 3, bases);
  randomize(g.coefficients(), rng, 1.0);
  CHECK(max_diff(g.materialize().values(), oracle::materialize_naive(g)) < 1e-12);
}

TEST_CASE("mismatched basis shapes are rejected") {
  CHECK_THROWS_AS(FactorizedLinear::from_bases(1, 2, {Tensor({2, 3}), Tensor({3, 2})}), DimensionError);
  CHECK_THROWS_AS(FactorizedLinear::from_bases(2, 2, {Tensor({2, 3})}), ConfigError);
}

TEST_CASE("rank-one bases are orthonormal") {
  FactorizedLinear f(6, 5, 3, 3, 7);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t j2 = 0; j2 < 3; ++j2)
        for (std::size_t k2 = 0; k2 < 3; ++k2) {
          const Tensor a = f.basis(j, k), b = f.basis(j2, k2);
          double dot = 0.0;
          for (std::size_t e = 0; e < a.numel(); ++e) dot += a.values()[e] * b.values()[e];
          CHECK(std::abs(dot - ((j == j2 && k == k2) ? 1.0 : 0.0)) < 1e-12);
        }
}

TEST_CASE("materialize is linear in the coefficients") {
  Rng rng(3);
  FactorizedLinear f(4, 6, 3, 3, 5);
  Tensor a1({3, 3}), a2({3, 3});
  randomize(a1, rng, 1.0);
  randomize(a2, rng, 1.0);
  auto with = [&](const Tensor& a) {
    auto v = f.coefficients().mutable_values();
    std::copy(a.values().begin(), a.values().end(), v.begin());
    f.clear_cache();
    const Tensor w = f.materialize();
    return std::vector<double>(w.values().begin(), w.values().end());
  };
  const auto w1 = with(a1), w2 = with(a2);
  Tensor mix({3, 3});
  for (std::size_t i = 0; i < 9; ++i) mix.mutable_values()[i] = 2.0 * a1.values()[i] - 0.5 * a2.values()[i];
  const auto wm = with(mix);
  for (std::size_t i = 0; i < wm.size(); ++i) CHECK(std::abs(wm[i] - (2.0 * w1[i] - 0.5 * w2[i])) < 1e-12);
}

TEST_CASE("cached weight follows coefficient updates") {
  FactorizedLinear f(3, 4, 2, 2, 1);
  NoGradGuard ng;
  const Tensor w0 = f.materialize();
  CHECK(f.materialize().id() == w0.id());
  f.coefficients().mutable_values()[0] += 1.0;
  const Tensor w1 = f.materialize();
  CHECK(w1.id() != w0.id());
  CHECK(max_diff(w1.values(), oracle::materialize_naive(f)) < 1e-12);
}

TEST_CASE("spline term: zero coefficients, naive oracle, local support") {
  Rng rng(21);
  KanOptions opt;
  KanLayer layer = make_kan_layer(5, 4, opt, rng);
  const Tensor x = random_input(20, 5, rng);
  const Tensor zero = spline_term(x, layer);
  for (double v : zero.values()) CHECK(v == 0.0);

  randomize(layer.alpha, rng, 1.0);
  const Tensor s = spline_term(x, layer);
  const std::size_t nb = layer.grid.num_basis();
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t o = 0; o < 4; ++o) {
      double ref = 0.0;
      for (std::size_t i = 0; i < 5; ++i) {
        const double xc = std::clamp(x.values()[r * 5 + i], -2.0, 2.0);
        const auto b = oracle::cox_de_boor_all(layer.grid.knots(), 3, xc);
        for (std::size_t m = 0; m < nb; ++m) ref += layer.alpha.values()[(i * nb + m) * 4 + o] * b[m];
      }
      CHECK(std::abs(s.values()[r * 4 + o] - ref) < 1e-10);
    }

  // one-hot coefficient: response is the single basis function, maximal near its centre
  KanLayer one = make_kan_layer(1, 2, opt, rng);
  one.alpha.mutable_values()[4 * 2 + 0] = 1.0;
  double best_x = 0.0, best = -1.0;
  Tensor probe({401, 1});
  for (std::size_t i = 0; i < 401; ++i) probe.mutable_values()[i] = -2.0 + 0.01 * static_cast<double>(i);
  const Tensor out = spline_term(probe, one);
  for (std::size_t i = 0; i < 401; ++i) {
    if (out.values()[i * 2] > best) {
      best = out.values()[i * 2];
      best_x = probe.values()[i];
    }
    CHECK(out.values()[i * 2 + 1] == 0.0);
  }
  double ref_x = 0.0, ref = -1.0;
  for (std::size_t i = 0; i < 401; ++i) {
    const double b = oracle::cox_de_boor_all(one.grid.knots(), 3, probe.values()[i])[4];
    if (b > ref) {
      ref = b;
      ref_x = probe.values()[i];
    }
  }
  CHECK(best_x == ref_x);
  CHECK(best == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("spline term shape errors") {
  Rng rng(2);
  KanLayer layer = make_kan_layer(3, 4, KanOptions{}, rng);
  CHECK_THROWS_AS(spline_term(Tensor({2, 4}), layer), DimensionError);
  CHECK_THROWS_AS(kan_layer_forward(Tensor({2, 2}), layer), DimensionError);
}

TEST_CASE("layer forward matches the scalar oracle") {
  Rng rng(5);
  KanLayer layer = make_kan_layer(4, 5, KanOptions{}, rng);
  randomize(layer.alpha, rng, 0.5);
  randomize(layer.gain, rng, 1.0);
  randomize(layer.bias, rng, 1.0);
  const Tensor x = random_input(3, 4, rng);
  const auto ref = oracle::kan_layer_scalar({x.values().begin(), x.values().end()}, 3, layer);
  CHECK(max_diff(kan_layer_forward(x, layer).values(), ref) < 1e-10);
}

TEST_CASE("layer norm properties") {
  Rng rng(8);
  KanLayer layer = make_kan_layer(3, 6, KanOptions{}, rng);
  randomize(layer.alpha, rng, 2.0);
  const Tensor y = kan_layer_forward(random_input(10, 3, rng), layer);
  for (std::size_t r = 0; r < 10; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t o = 0; o < 6; ++o) mu += y.values()[r * 6 + o];
    mu /= 6.0;
    for (std::size_t o = 0; o < 6; ++o) var += std::pow(y.values()[r * 6 + o] - mu, 2);
    var /= 6.0;
    CHECK(std::abs(mu) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }

  // constant pre-norm row -> bias
  for (double& v : layer.linear.coefficients().mutable_values()) v = 0.0;
  for (double& v : layer.alpha.mutable_values()) v = 0.0;
  for (std::size_t o = 0; o < 6; ++o) layer.bias.mutable_values()[o] = 0.25 * static_cast<double>(o);
  const Tensor c = kan_layer_forward(random_input(4, 3, rng), layer);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t o = 0; o < 6; ++o) CHECK(c.values()[r * 6 + o] == doctest::Approx(0.25 * o).epsilon(1e-12));
}

TEST_CASE("d_out below two is a configuration error") {
  Rng rng(1);
  CHECK_THROWS_AS(make_kan_layer(4, 1, KanOptions{}, rng), ConfigError);
  CHECK_THROWS_AS(make_kan_layer(0, 3, KanOptions{}, rng), ConfigError);
}

TEST_CASE("initial layer reduces to the materialized map") {
  // alpha starts at zero, so the layer is LayerNorm(W silu(x)) exactly
  Rng rng(13);
  KanLayer layer = make_kan_layer(6, 4, KanOptions{}, rng);
  for (double v : layer.alpha.values()) CHECK(v == 0.0);
  const Tensor x = random_input(16, 6, rng, -0.1, 0.1);
  const auto w = oracle::materialize_naive(layer.linear);
  const Tensor y = kan_layer_forward(x, layer);
  std::vector<double> u(4);
  for (std::size_t r = 0; r < 16; ++r) {
    for (std::size_t o = 0; o < 4; ++o) {
      u[o] = 0.0;
      for (std::size_t i = 0; i < 6; ++i) {
        const double xi = x.values()[r * 6 + i];
        u[o] += w[o * 6 + i] * xi / (1.0 + std::exp(-xi));
      }
    }
    double mu = 0.0, var = 0.0;
    for (double v : u) mu += v;
    mu /= 4.0;
    for (double v : u) var += (v - mu) * (v - mu);
    var /= 4.0;
    for (std::size_t o = 0; o < 4; ++o)
      CHECK(std::abs(y.values()[r * 4 + o] - (u[o] - mu) / std::sqrt(var + 1e-5)) < 1e-6);
  }

  // and the pre-norm term is a mild map: ||W||_F close to the fan-in scaled gain
  double fro = 0.0;
  for (double v : w) fro += v * v;
  CHECK(std::sqrt(fro) < 0.5);
  CHECK(std::sqrt(fro) > 0.0);
}

TEST_CASE("empty network is the identity") {
  Rng rng(4);
  KanNetwork net;
  const Tensor x = random_input(3, 5, rng);
  CHECK(max_diff(kan_forward(x, net).values(), x.values()) == 0.0);
}

TEST_CASE("network dims chain and parameter names") {
  Rng rng(6);
  KanNetwork net = make_kan_network({5, 7, 3}, KanOptions{}, rng);
  CHECK(net.input_dim() == 5);
  CHECK(net.output_dim() == 3);
  const auto params = net.parameters("p");
  REQUIRE(params.size() == 8);
  CHECK(params[0].name == "p.layer0.a");
  CHECK(params[1].name == "p.layer0.alpha");
  CHECK(params[2].name == "p.layer0.ln_gain");
  CHECK(params[3].name == "p.layer0.ln_bias");
  CHECK(params[1].tensor.shape() == Shape{5, 8, 7});
  CHECK(params[7].name == "p.layer1.ln_bias");
  CHECK_THROWS_AS(kan_forward(Tensor({2, 4}), net), DimensionError);
}

TEST_CASE("rows are processed independently") {
  Rng rng(17);
  KanNetwork net = make_kan_network({4, 6, 3}, KanOptions{}, rng);
  for (auto& l : net.layers) randomize(l.alpha, rng, 0.3);
  const Tensor x = random_input(5, 4, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor xp({5, 4});
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) xp.mutable_values()[r * 4 + c] = x.values()[perm[r] * 4 + c];
  const Tensor y = kan_forward(x, net), yp = kan_forward(xp, net);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(yp.values()[r * 3 + c] == y.values()[perm[r] * 3 + c]);
}

TEST_CASE("network gradients match finite differences") {
  Rng rng(23);
  KanNetwork net = make_kan_network({3, 5, 4}, KanOptions{}, rng);
  for (auto& l : net.layers) {
    randomize(l.alpha, rng, 0.3);
    randomize(l.gain, rng, 1.0);
    randomize(l.bias, rng, 0.5);
    randomize(l.linear.coefficients(), rng, 0.5);
  }
  Tensor x = random_input(6, 3, rng, -1.9, 1.9);
  x.set_requires_grad(true);
  Tensor probe = random_input(6, 4, rng, -1.0, 1.0);
  std::vector<Tensor> wrt{x};
  for (const auto& p : net.parameters("n")) wrt.push_back(p.tensor);
  auto loss = [&] { return sum(mul(kan_forward(x, net), probe)); };
  const auto r = oracle::check_gradients(loss, wrt, 1e-6, 40, 1e-3);
  INFO(r.worst);
  CHECK(r.checked > 100);
  CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("row MAC count") {
  Rng rng(1);
  KanNetwork net = make_kan_network({4, 6, 3}, KanOptions{}, rng);
  // linear d_in d_out plus (p+1) d_in d_out spline terms per layer
  CHECK(kan_row_macs(net) == (4 * 6 + 4 * 4 * 6) + (6 * 3 + 4 * 6 * 3));
}

}  // TEST_SUITE
