#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "evc/checkpoint.hpp"
#include "evc/errors.hpp"
#include "evc/models.hpp"
#include "oracles.hpp"

using namespace evc;

namespace {

GeneratorConfig tiny_f0_gen() {
  GeneratorConfig cfg;
  cfg.in_channels = 10;
  cfg.gated_kernel = 5;
  cfg.gated_channels = 12;
  cfg.gated_repeat = 1;
  cfg.res_hidden = 12;
  cfg.res_repeat = 1;
  cfg.use_transformer = false;
  cfg.post_kernel = 5;
  cfg.dropout = 0.0;
  return cfg;
}

GeneratorConfig tiny_spec_gen() {
  GeneratorConfig cfg;
  cfg.in_channels = 6;
  cfg.gated_kernel = 3;
  cfg.gated_channels = 8;
  cfg.gated_repeat = 2;
  cfg.res_hidden = 8;
  cfg.res_repeat = 2;
  cfg.heads = 2;
  cfg.dropout = 0.1;
  cfg.post_kernel = 3;
  cfg.use_transformer = true;
  return cfg;
}

DiscriminatorConfig tiny_f0_disc(bool fine) {
  DiscriminatorConfig cfg;
  cfg.two_d = false;
  cfg.in_channels = 10;
  cfg.kernel = 5;
  cfg.channels = {4, 8, 16};
  cfg.stride_time = 2;
  cfg.fine_grained = fine;
  cfg.norm = NormKind::None;
  return cfg;
}

Tensor random_features(Shape shape, std::uint64_t seed) {
  return Tensor::from(shape, test::random_vector(shape_numel(shape), seed));
}

}  // namespace

TEST_CASE("generator preserves the time length of its input") {
  GeneratorConfig cfg = tiny_spec_gen();
  ParamMap params = init_generator_params(cfg, "g", 3);
  for (std::size_t T : {64u, 100u, 128u}) {
    Graph g(1);
    Tensor x = random_features({1, 6, T}, 500 + T);
    Tensor y = generator_forward(g, params, "g", cfg, x);
    CHECK(y.shape() == Shape{1, 6, T});
  }
}

TEST_CASE("freshly initialized generator stays finite over random inputs") {
  GeneratorConfig cfg = tiny_f0_gen();
  ParamMap params = init_generator_params(cfg, "g", 9);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Graph g(seed);
    Tensor x = random_features({1, 10, 40}, seed);
    Tensor y = generator_forward(g, params, "g", cfg, x);
    for (Scalar v : y.value()) {
      CHECK(std::isfinite(v));
      CHECK(std::fabs(v) < 1e6);
    }
  }
}

TEST_CASE("generator forward is deterministic with dropout disabled") {
  GeneratorConfig cfg = tiny_spec_gen();
  ParamMap params = init_generator_params(cfg, "g", 11);
  Tensor x = random_features({1, 6, 32}, 77);
  Graph g1(42), g2(42);
  Tensor y1 = generator_forward(g1, params, "g", cfg, x, /*training=*/false);
  Tensor y2 = generator_forward(g2, params, "g", cfg, x, /*training=*/false);
  CHECK(y1.value() == y2.value());
}

TEST_CASE("generator rejects inputs below the receptive field") {
  GeneratorConfig cfg = tiny_f0_gen();
  ParamMap params = init_generator_params(cfg, "g", 1);
  Graph g;
  Tensor x = random_features({1, 10, 3}, 5);
  CHECK_THROWS_AS(generator_forward(g, params, "g", cfg, x), InputError);
}

TEST_CASE("identity debug generator reproduces its input") {
  GeneratorConfig cfg = tiny_f0_gen();
  cfg.norm = NormKind::None;
  cfg.gated_channels = 12;
  cfg.res_hidden = 12;
  ParamMap params = identity_generator_params(cfg, "g");
  Graph g;
  Tensor x = random_features({1, 10, 50}, 123);
  Tensor y = generator_forward(g, params, "g", cfg, x);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(std::fabs(y.value()[i] - x.value()[i]) < 1e-5);
  }
  // with conditioning, the round trip still holds
  GeneratorConfig cond_cfg = cfg;
  cond_cfg.cond = default_f0_conditioning();
  ParamMap cp = identity_generator_params(cond_cfg, "g");
  Graph g2;
  Tensor y2 = generator_forward(g2, cp, "g", cond_cfg, x);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(std::fabs(y2.value()[i] - x.value()[i]) < 1e-5);
  }
}

TEST_CASE("discriminator outputs live strictly inside (0,1)") {
  DiscriminatorConfig cfg = tiny_f0_disc(true);
  ParamMap params = init_discriminator_params(cfg, "d", 21);
  Graph g;
  Tensor x = random_features({2, 10, 64}, 33);
  auto out = discriminator_forward(g, params, "d", cfg, x);
  CHECK(out.utterance.shape() == Shape{2});
  for (Scalar v : out.utterance.value()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  REQUIRE(out.frames.has_value());
  for (Scalar v : out.frames->value()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("zero-initialized dense head scores exactly one half") {
  DiscriminatorConfig cfg = tiny_f0_disc(false);
  ParamMap params = init_discriminator_params(cfg, "d", 5);
  std::fill(params["d.head.w"].mutable_value().begin(),
            params["d.head.w"].mutable_value().end(), 0.0);
  Graph g;
  auto out = discriminator_forward(g, params, "d", cfg, random_features({1, 10, 32}, 7));
  CHECK(out.utterance.value()[0] == 0.5);
  CHECK_FALSE(out.frames.has_value());
}

TEST_CASE("frame score length follows the conv arithmetic for T=128") {
  DiscriminatorConfig cfg = tiny_f0_disc(true);
  // stride-2 same padding: 128 -> 64 -> 32 -> 16
  CHECK(discriminator_frame_count(cfg, 128) == 16);
  ParamMap params = init_discriminator_params(cfg, "d", 2);
  Graph g;
  auto out = discriminator_forward(g, params, "d", cfg, random_features({1, 10, 128}, 3));
  REQUIRE(out.frames.has_value());
  CHECK(out.frames->shape() == Shape{1, 16});
}

TEST_CASE("2-D discriminator consumes an envelope image and rejects 1-D input") {
  DiscriminatorConfig cfg;
  cfg.two_d = true;
  cfg.in_channels = 1;
  cfg.kernel = 3;
  cfg.channels = {4, 8, 16};
  cfg.stride_freq = 2;
  cfg.stride_time = 2;
  cfg.fine_grained = true;
  cfg.norm = NormKind::None;
  ParamMap params = init_discriminator_params(cfg, "d", 8);
  Graph g;
  Tensor x = random_features({1, 1, 33, 40}, 9);
  auto out = discriminator_forward(g, params, "d", cfg, x);
  CHECK(out.utterance.numel() == 1);
  REQUIRE(out.frames.has_value());
  CHECK(out.frames->shape()[1] == discriminator_frame_count(cfg, 40));
  CHECK_THROWS_AS(discriminator_forward(g, params, "d", cfg,
                                        random_features({1, 10, 40}, 10)),
                  ShapeError);
}

TEST_CASE("build_model_suite matches the variant matrix") {
  SuiteHyper hyper;
  hyper.envelope_bins = 17;
  hyper.spec_gated_channels = 8;
  hyper.spec_gated_kernel = 3;
  hyper.spec_res_hidden = 8;
  hyper.spec_heads = 2;
  hyper.f0_gated_channels = 8;
  hyper.f0_res_hidden = 8;
  hyper.spec_disc_channels = {2, 4, 8};
  hyper.f0_disc_channels = {2, 4, 8};

  auto base = build_model_suite(Variant::Base, hyper, 1);
  auto cl = build_model_suite(Variant::CL, hyper, 1);
  auto all = build_model_suite(Variant::All, hyper, 1);

  CHECK_FALSE(base.spec_disc.fine_grained);
  CHECK_FALSE(base.f0_disc.fine_grained);
  CHECK_FALSE(cl.spec_disc.fine_grained);
  CHECK_FALSE(cl.f0_disc.fine_grained);
  CHECK(all.spec_disc.fine_grained);
  CHECK(all.f0_disc.fine_grained);

  // spectrogram generator carries the transformer twice; F0 generator never
  CHECK(base.spec_gen.res_repeat == 2);
  CHECK(base.spec_gen.gated_repeat == 2);
  CHECK(base.spec_gen.use_transformer);
  CHECK_FALSE(base.f0_gen.use_transformer);
  CHECK(base.f0_gen.gated_repeat == 1);
  CHECK(base.f0_gen.res_repeat == 1);

  // base and cl share the architecture, parameter for parameter
  CHECK(base.params.size() == cl.params.size());
  for (const auto& [name, tensor] : base.params) {
    auto it = cl.params.find(name);
    REQUIRE(it != cl.params.end());
    CHECK(it->second.shape() == tensor.shape());
  }
  // the all variant only adds the fine-grained heads
  std::size_t extra = 0;
  for (const auto& [name, tensor] : all.params) {
    if (base.params.find(name) == base.params.end()) {
      ++extra;
      CHECK(name.find(".fine.") != std::string::npos);
    }
  }
  CHECK(extra == 8);  // w and b for 4 discriminators

  CHECK(suite_config_hash(base) == suite_config_hash(cl));  // same architecture
  CHECK(suite_config_hash(base) != suite_config_hash(all));

  CHECK_THROWS_AS(parse_variant("bogus"), ConfigError);
  CHECK(parse_variant("all") == Variant::All);
}

TEST_CASE("parameter names and shapes are a pure function of the config") {
  GeneratorConfig cfg = tiny_spec_gen();
  ParamMap a = init_generator_params(cfg, "g", 1);
  ParamMap b = init_generator_params(cfg, "g", 2);
  REQUIRE(a.size() == b.size());
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    CHECK(ia->first == ib->first);
    CHECK(ia->second.shape() == ib->second.shape());
  }
  ParamMap c = init_generator_params(cfg, "g", 1);
  for (const auto& [name, tensor] : a) {
    CHECK(c[name].value() == tensor.value());  // same seed, same values
  }
}

TEST_CASE("checkpoint round-trip preserves forward outputs bit-exactly") {
  GeneratorConfig cfg = tiny_spec_gen();
  ParamMap params = init_generator_params(cfg, "g", 31);
  Tensor x = random_features({1, 6, 48}, 32);
  Graph g1(7);
  Tensor before = generator_forward(g1, params, "g", cfg, x);

  CheckpointFile file;
  file.variant = "base";
  file.config_hash = "cafe";
  for (const auto& [name, tensor] : params) file.records.emplace_back(name, tensor);
  auto dir = std::filesystem::temp_directory_path() / "evc_models_test";
  std::filesystem::create_directories(dir);
  auto path = dir / "gen.evck";
  write_checkpoint(path, file);

  CheckpointFile loaded = read_checkpoint(path);
  CHECK(loaded.variant == "base");
  CHECK(loaded.config_hash == "cafe");
  ParamMap restored;
  for (auto& [name, tensor] : loaded.records) {
    tensor.set_requires_grad(true);
    restored[name] = tensor;
  }
  Graph g2(7);
  Tensor after = generator_forward(g2, restored, "g", cfg, x);
  CHECK(before.value() == after.value());
}

TEST_CASE("transformer path couples distant frames; conv-only path does not") {
  // both arms norm-free so instance statistics cannot leak information
  GeneratorConfig with_tf = tiny_spec_gen();
  with_tf.norm = NormKind::None;
  with_tf.dropout = 0.0;
  GeneratorConfig conv_only = with_tf;
  conv_only.use_transformer = false;

  const std::size_t T = 64;
  // conv receptive field: three K=3 gated convs + adapter + two K=3 residual
  // convs + K=3 post conv -> radius well under 16 frames
  const std::size_t t_out = 8, t_in = 56;

  auto probe = [&](const GeneratorConfig& cfg) {
    ParamMap params = init_generator_params(cfg, "g", 41);
    Tensor x = Tensor::param({1, 6, T}, test::random_vector(6 * T, 42));
    Graph g(1);
    Tensor y = generator_forward(g, params, "g", cfg, x);
    // scalar probe: one output element at (channel 0, t_out)
    std::vector<Scalar> mask(y.numel(), 0.0);
    mask[t_out] = 1.0;
    Tensor probe_loss = sum(g, mul(g, y, Tensor::from(y.shape(), mask)));
    g.backward(probe_loss);
    Scalar far_grad = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      far_grad = std::max(far_grad, std::fabs(x.grad()[c * T + t_in]));
    }
    return far_grad;
  };

  CHECK(probe(with_tf) > 0.0);
  CHECK(probe(conv_only) == 0.0);
}
