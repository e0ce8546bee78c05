#include <doctest.h>

#include "ganmut/networks.hpp"
#include "support/helpers.hpp"

using namespace ganmut;
using ganmut::testing::random_images;
using ganmut::testing::tiny_model_config;

TEST_CASE("build_models shape contract at S=32") {
  ModelConfig mc;
  mc.image_size = 32;
  mc.base_channels = 4;
  mc.num_residual_blocks = 1;
  mc.seed = 3;
  auto [g, d] = build_models(mc);

  auto images = random_images(4, 32, torch::kFloat32, 5);
  auto codes = torch::zeros({4, 2});
  auto out = generator_forward(g, images, codes);
  CHECK(out.sizes() == torch::IntArrayRef({4, 3, 32, 32}));
  CHECK(out.min().item<double>() >= -1.0);
  CHECK(out.max().item<double>() <= 1.0);

  auto dout = discriminator_forward(d, images);
  CHECK(dout.src.sizes() == torch::IntArrayRef({4}));
  CHECK(dout.cls_logits.sizes() == torch::IntArrayRef({4, 7}));
  CHECK(dout.coor.sizes() == torch::IntArrayRef({4, 2}));
}

TEST_CASE("generator output shape matches input for every supported size") {
  for (int s : {16, 32, 64}) {
    ModelConfig mc;
    mc.image_size = s;
    mc.base_channels = 2;
    mc.num_residual_blocks = 0;
    auto [g, d] = build_models(mc);
    auto images = random_images(2, s, torch::kFloat32, 9);
    auto out = generator_forward(g, images, torch::zeros({2, 2}));
    CHECK(out.sizes() == images.sizes());
  }
}

TEST_CASE("same seed gives bit-identical initial parameters") {
  auto mc = tiny_model_config();
  auto [g1, d1] = build_models(mc);
  auto [g2, d2] = build_models(mc);
  CHECK(parameter_digest(*g1) == parameter_digest(*g2));
  CHECK(parameter_digest(*d1) == parameter_digest(*d2));

  mc.seed = 8;
  auto [g3, d3] = build_models(mc);
  CHECK(parameter_digest(*g1) != parameter_digest(*g3));
}

TEST_CASE("unsupported image sizes are configuration errors") {
  ModelConfig mc = tiny_model_config();
  mc.image_size = 15;
  CHECK_THROWS_AS(build_models(mc), ConfigError);
  mc.image_size = 8;
  CHECK_THROWS_AS(build_models(mc), ConfigError);
  mc.image_size = 256;
  CHECK_THROWS_AS(build_models(mc), ConfigError);
  mc = tiny_model_config();
  mc.num_labels = 1;
  CHECK_THROWS_AS(build_models(mc), ConfigError);
}

TEST_CASE("shape mismatches are validation errors") {
  auto [g, d] = build_models(tiny_model_config());
  auto images = random_images(2, 16, torch::kFloat32, 1);
  CHECK_THROWS_AS(generator_forward(g, images, torch::zeros({3, 2})), ValidationError);
  CHECK_THROWS_AS(generator_forward(g, random_images(2, 32, torch::kFloat32, 1),
                                    torch::zeros({2, 2})),
                  ValidationError);
  CHECK_THROWS_AS(discriminator_forward(d, random_images(2, 32, torch::kFloat32, 1)),
                  ValidationError);
}

TEST_CASE("finite-difference gradient of generator output w.r.t. an input pixel") {
  auto mc = tiny_model_config(torch::kFloat64);
  auto [g, d] = build_models(mc);
  auto images = random_images(1, 16, torch::kFloat64, 21).requires_grad_(true);
  auto codes = torch::tensor({{0.3, -0.2}}, torch::kFloat64);

  auto mean_out = g->forward(images, codes).mean();
  mean_out.backward();
  const double analytic = images.grad().index({0, 1, 5, 7}).item<double>();

  const double h = 1e-6;
  auto probe = images.detach().clone();
  probe.index_put_({0, 1, 5, 7}, probe.index({0, 1, 5, 7}) + h);
  const double plus = g->forward(probe, codes).mean().item<double>();
  probe.index_put_({0, 1, 5, 7}, probe.index({0, 1, 5, 7}) - 2 * h);
  const double minus = g->forward(probe, codes).mean().item<double>();
  const double fd = (plus - minus) / (2 * h);

  CHECK(std::fabs(analytic - fd) <=
        1e-3 * std::max({std::fabs(analytic), std::fabs(fd), 1e-12}));
}

TEST_CASE("conditioning changes the generated output") {
  auto [g, d] = build_models(tiny_model_config());
  auto images = random_images(2, 16, torch::kFloat32, 13);
  EmotionCode a{0.0, 1.0};
  EmotionCode b{kPi, 1.0};
  auto out_a = generator_forward(g, images, codes_to_tensor({a, a}));
  auto out_b = generator_forward(g, images, codes_to_tensor({b, b}));
  CHECK((out_a - out_b).abs().mean().item<double>() > 0.0);
}

TEST_CASE("critic score is differentiable w.r.t. the input") {
  auto [g, d] = build_models(tiny_model_config());
  auto images = random_images(2, 16, torch::kFloat32, 29).requires_grad_(true);
  auto src = d->src(images).sum();
  auto grads = torch::autograd::grad({src}, {images});
  CHECK(grads[0].isfinite().all().item<bool>());
  CHECK(grads[0].abs().sum().item<double>() > 0.0);
}

TEST_CASE("degenerate all-zero input stays finite") {
  auto [g, d] = build_models(tiny_model_config());
  auto zeros = torch::zeros({2, 3, 16, 16});
  auto out = discriminator_forward(d, zeros);
  CHECK(out.src.isfinite().all().item<bool>());
  auto gen = generator_forward(g, zeros, torch::zeros({2, 2}));
  CHECK(gen.isfinite().all().item<bool>());
}

TEST_CASE("forwards are deterministic functions of parameters and inputs") {
  auto [g, d] = build_models(tiny_model_config());
  auto images = random_images(3, 16, torch::kFloat32, 31);
  auto codes = codes_to_tensor({{0.1, 0.9}, {2.0, 0.5}, {4.0, 0.2}});
  auto a = generator_forward(g, images, codes);
  auto b = generator_forward(g, images, codes);
  CHECK(torch::equal(a, b));
  auto da = discriminator_forward(d, images);
  auto db = discriminator_forward(d, images);
  CHECK(torch::equal(da.src, db.src));
  CHECK(torch::equal(da.cls_logits, db.cls_logits));
  CHECK(torch::equal(da.coor, db.coor));
}

TEST_CASE("every parameter of both networks receives gradient (no dead heads)") {
  auto mc = tiny_model_config();
  auto [g, d] = build_models(mc);
  auto images = random_images(2, 16, torch::kFloat32, 41);
  auto codes = codes_to_tensor({{0.4, 0.8}, {3.0, 0.3}});

  auto fake = g->forward(images, codes);
  auto dout = d->forward(fake);
  auto loss = fake.mean() + dout.src.mean() + dout.cls_logits.mean() + dout.coor.mean();
  loss.backward();

  for (const auto& p : g->named_parameters()) {
    INFO("generator parameter ", p.key());
    REQUIRE(p.value().grad().defined());
    CHECK(p.value().grad().abs().max().item<double>() > 0.0);
  }
  for (const auto& p : d->named_parameters()) {
    INFO("discriminator parameter ", p.key());
    REQUIRE(p.value().grad().defined());
    CHECK(p.value().grad().abs().max().item<double>() > 0.0);
  }
}

TEST_CASE("tile_codes broadcasts constants over space") {
  auto codes = torch::tensor({{0.25, -0.5}});
  auto tiled = tile_codes(codes, 4);
  CHECK(tiled.sizes() == torch::IntArrayRef({1, 2, 4, 4}));
  CHECK(tiled.index({0, 0}).min().item<double>() == 0.25);
  CHECK(tiled.index({0, 0}).max().item<double>() == 0.25);
  CHECK(tiled.index({0, 1}).max().item<double>() == -0.5);
}
