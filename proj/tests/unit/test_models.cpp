#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ckan/errors.h"
#include "ckan/models.h"
#include "ckan/objectives.h"
#include "ckan/ops.h"
#include "ckan/training.h"
#include "oracles.h"

using namespace ckan;

namespace {

Tensor random_image(std::size_t b, std::size_t c, std::size_t h, std::size_t w, Rng& rng, double lo = 0.0,
                    double hi = 1.0) {
  Tensor x({b, c, h, w});
  for (double& v : x.mutable_values()) v = rng.uniform(lo, hi);
  return x;
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

GeneratorConfig tiny_generator(bool ckan = true, std::size_t upscale = 2) {
  GeneratorConfig g;
  g.base_channels = 3;
  g.num_residual_blocks = 1;
  g.upscale = upscale;
  g.ckan_blocks = ckan;
  g.ckan_upsample = ckan;
  g.kan_hidden = 4;
  g.residual_gain = 0.5;
  g.seed = 3;
  return g;
}

void zero(const ParameterList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_values()) v = 0.0;
  }
}

void jitter(const ParameterList& params, Rng& rng, double sd) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_values()) v += rng.normal(0.0, sd);
  }
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("depth to space layout") {
  Tensor x({1, 4, 1, 1}, {1.0, 2.0, 3.0, 4.0});
  const Tensor y = depth_to_space(x, 2);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.values()[0] == 1.0);
  CHECK(y.values()[1] == 2.0);
  CHECK(y.values()[2] == 3.0);
  CHECK(y.values()[3] == 4.0);
  CHECK_THROWS_AS(depth_to_space(Tensor({1, 6, 2, 2}), 2), Error);
}

TEST_CASE("depth to space is a bijection") {
  Rng rng(1);
  const Tensor x = random_image(2, 8, 3, 5, rng);
  const Tensor y = depth_to_space(x, 2);
  REQUIRE(y.shape() == Shape{2, 2, 6, 10});
  // index formula
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t w = 0; w < 5; ++w)
          for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j)
              CHECK(y.values()[((b * 2 + c) * 6 + h * 2 + i) * 10 + w * 2 + j] ==
                    x.values()[((b * 8 + c * 4 + i * 2 + j) * 3 + h) * 5 + w]);
  CHECK(max_diff(space_to_depth(y, 2).values(), x.values()) == 0.0);
  std::vector<double> a(x.values().begin(), x.values().end()), b(y.values().begin(), y.values().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("generator config validation") {
  GeneratorConfig g;
  g.upscale = 3;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g.upscale = 4;
  g.num_residual_blocks = 0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g.num_residual_blocks = 4;
  CHECK_NOTHROW(g.validate());
}

TEST_CASE("residual block identity and branch") {
  Rng rng(2);
  Generator g = make_generator(tiny_generator());
  ResidualBlock& blk = g.blocks[0];
  const Tensor x = random_image(1, 3, 4, 4, rng, -1.0, 1.0);
  jitter(blk.first.parameters("f"), rng, 0.2);
  jitter(blk.second.parameters("s"), rng, 0.2);
  const Tensor y = residual_block(x, blk);
  const Tensor f = residual_branch(x, blk);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.values()[i] - x.values()[i] - f.values()[i]) < 1e-12);

  // zero linear part, alpha and bias of the second projector: F == 0
  auto& net = std::get<KanNetwork>(blk.second.projector);
  for (auto& l : net.layers) {
    for (double& v : l.linear.coefficients().mutable_values()) v = 0.0;
    for (double& v : l.alpha.mutable_values()) v = 0.0;
  }
  for (double& v : net.layers.back().bias.mutable_values()) v = 0.0;
  CHECK(max_diff(residual_block(x, blk).values(), x.values()) == 0.0);
}

TEST_CASE("residual block gradients") {
  Rng rng(4);
  for (bool ckan : {true, false}) {
    auto cfg = tiny_generator(ckan);
    cfg.base_channels = 2;
    Generator g = make_generator(cfg);
    ResidualBlock& blk = g.blocks[0];
    jitter(blk.first.parameters("f"), rng, 0.2);
    jitter(blk.second.parameters("s"), rng, 0.2);
    Tensor x = random_image(1, 2, 4, 4, rng, -1.0, 1.0);
    x.set_requires_grad(true);
    const Tensor probe = random_image(1, 2, 4, 4, rng, -1.0, 1.0);
    std::vector<Tensor> wrt{x};
    for (const auto& p : blk.first.parameters("f")) wrt.push_back(p.tensor);
    for (const auto& p : blk.second.parameters("s")) wrt.push_back(p.tensor);
    const auto r = oracle::check_gradients([&] { return sum(mul(residual_block(x, blk), probe)); }, wrt, 1e-6, 16,
                                           1e-3);
    INFO("ckan=" << ckan << " " << r.worst);
    CHECK(r.max_rel_err < 1e-5);
  }
}

TEST_CASE("generator output shape and range") {
  Rng rng(5);
  for (std::size_t s : {2, 4}) {
    for (bool ckan : {true, false}) {
      const Generator g = make_generator(tiny_generator(ckan, s));
      const Tensor y = generator_forward(random_image(2, 3, 5, 6, rng), g);
      REQUIRE(y.shape() == Shape{2, 3, 5 * s, 6 * s});
      for (double v : y.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
}

TEST_CASE("default generator layout") {
  const Generator g = make_generator(GeneratorConfig{});
  CHECK(g.blocks.size() == 4);
  CHECK(g.upsample.size() == 2);
  CHECK(g.blocks[0].first.is_kan());
  CHECK(!g.head.is_kan());
  CHECK(!g.upsample[0].is_kan());
  GeneratorConfig all;
  all.ckan_upsample = true;
  CHECK(make_generator(all).upsample[1].is_kan());
  const auto params = g.parameters();
  CHECK(params.front().name.rfind("head", 0) == 0);
  CHECK(params.back().name.rfind("tail", 0) == 0);
  bool finite = true;
  for (const auto& p : params)
    for (double v : p.tensor.values()) finite = finite && std::isfinite(v);
  CHECK(finite);
}

TEST_CASE("all-zero parameters give a constant finite image") {
  Rng rng(6);
  Generator g = make_generator(tiny_generator());
  zero(g.parameters());
  const Tensor y = generator_forward(random_image(1, 3, 4, 4, rng), g);
  for (double v : y.values()) CHECK(v == 0.5);
}

TEST_CASE("global skip surgery") {
  Rng rng(7);
  for (bool ckan : {true, false}) {
    Generator g = make_generator(tiny_generator(ckan));
    jitter(g.parameters(), rng, 0.1);
    const Tensor x = random_image(1, 3, 4, 4, rng);
    for (auto& b : g.blocks) {
      zero(b.first.parameters("f"));
      zero(b.second.parameters("s"));
    }
    zero(g.trunk.parameters("t"));
    // features collapse to the activated head alone
    const Tensor head = silu(ckan_forward(x, g.head));
    CHECK(max_diff(generator_features(x, g).values(), head.values()) == 0.0);
    CHECK(max_diff(generator_forward(x, g).values(), generator_reconstruct(head, g).values()) == 0.0);
  }
}

TEST_CASE("generator gradients spot check") {
  Rng rng(8);
  Generator g = make_generator(tiny_generator());
  jitter(g.parameters(), rng, 0.05);
  Tensor x = random_image(1, 3, 4, 4, rng);
  x.set_requires_grad(true);
  const Tensor probe = random_image(1, 3, 8, 8, rng, -1.0, 1.0);
  std::vector<Tensor> wrt{x};
  for (const auto& p : g.parameters()) wrt.push_back(p.tensor);
  const auto r =
      oracle::check_gradients([&] { return sum(mul(generator_forward(x, g), probe)); }, wrt, 1e-6, 6, 1e-3);
  INFO(r.worst);
  CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("discriminator shape, determinism and size limit") {
  Rng rng(9);
  const Discriminator d = make_discriminator(DiscriminatorConfig{});
  CHECK(d.min_input() == 32);
  const Tensor x = random_image(3, 3, 32, 40, rng);
  const Tensor a = discriminator_forward(x, d), b = discriminator_forward(x, d);
  REQUIRE(a.shape() == Shape{3, 1});
  CHECK(max_diff(a.values(), b.values()) == 0.0);
  CHECK_THROWS_AS(discriminator_forward(random_image(1, 3, 31, 40, rng), d), GeometryError);
  for (std::size_t i = 0; i + 1 < d.stages.size(); ++i) CHECK(!d.stages[i].is_kan());
}

TEST_CASE("discriminator gradients") {
  Rng rng(10);
  DiscriminatorConfig cfg;
  cfg.channels = {3, 4, 4, 4, 4};
  Discriminator d = make_discriminator(cfg);
  Tensor x = random_image(2, 3, 32, 32, rng);
  x.set_requires_grad(true);
  std::vector<Tensor> wrt{x};
  for (const auto& p : d.parameters()) wrt.push_back(p.tensor);
  const auto r = oracle::check_gradients([&] { return mean(discriminator_forward(x, d)); }, wrt, 1e-6, 12, 1e-3);
  INFO(r.worst);
  CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("global average") {
  Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 9});
  const Tensor m = global_average(x);
  REQUIRE(m.shape() == Shape{1, 2});
  CHECK(m.values()[0] == doctest::Approx(2.5));
  CHECK(m.values()[1] == doctest::Approx(6.75));
}

TEST_CASE("one pretraining step lowers the content loss") {
  Rng rng(11);
  Generator g = make_generator(tiny_generator(true, 4));
  const PerceptualExtractor ex;
  const Tensor lr = random_image(1, 3, 8, 8, rng);
  const Tensor hr = random_image(1, 3, 32, 32, rng);
  const auto params = g.parameters();
  AdamState st = AdamState::zeros(params);
  AdamConfig ac;
  ac.lr = 1e-4;
  Tensor before = content_loss(hr, generator_forward(lr, g), ex);
  before.backward();
  adam_step(params, st, ac);
  g.clear_weight_caches();
  const Tensor after = content_loss(hr, generator_forward(lr, g), ex);
  CHECK(after.item() < before.item());
}

TEST_CASE("config hash tracks structure only") {
  GeneratorConfig a;
  DiscriminatorConfig d;
  GeneratorConfig b = a;
  b.seed = 99;
  b.chunk_pixels = 7;
  CHECK(config_hash(a, d) == config_hash(b, d));
  b.kan_hidden = 5;
  CHECK(config_hash(a, d) != config_hash(b, d));
  DiscriminatorConfig d2 = d;
  d2.channels.back() = 32;
  CHECK(config_hash(a, d) != config_hash(a, d2));
}

}  // TEST_SUITE
