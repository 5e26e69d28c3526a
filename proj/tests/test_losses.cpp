#include <cmath>

#include "doctest.h"
#include "evc/errors.hpp"
#include "evc/losses.hpp"
#include "evc/models.hpp"
#include "oracles.hpp"

using namespace evc;

namespace {

ApplyFn shift_by(Scalar c) {
  return [c](Graph& g, const Tensor& x) { return add_scalar(g, x, c); };
}

ApplyFn identity_fn() {
  return [](Graph& g, const Tensor& x) { return scale(g, x, 1.0); };
}

DiscFn constant_disc(Scalar score) {
  return [score](Graph&, const Tensor& x) {
    DiscriminatorOutput out;
    out.utterance = Tensor::from({x.shape()[0]}, std::vector<Scalar>(x.shape()[0], score));
    return out;
  };
}

Tensor scalar_batch(std::vector<Scalar> values) {
  std::size_t b = values.size();
  return Tensor::from({b, 1, 1}, std::move(values));
}

}  // namespace

TEST_CASE("cycle loss closed forms") {
  Tensor xa = scalar_batch({1.0, -2.0, 0.5});
  Tensor xb = scalar_batch({3.0, 4.0});
  SUBCASE("identity generators give exactly zero") {
    Graph g;
    CHECK(cycle_loss(g, identity_fn(), identity_fn(), xa, xb).item() == 0.0);
  }
  SUBCASE("two +1 shifts accumulate to 4") {
    Graph g;
    CHECK(cycle_loss(g, shift_by(1.0), shift_by(1.0), xa, xb).item() ==
          doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("mutually inverse shifts cancel exactly") {
    Graph g;
    CHECK(cycle_loss(g, shift_by(2.5), shift_by(-2.5), xa, xb).item() == 0.0);
  }
  SUBCASE("empty batch is an error") {
    Graph g;
    CHECK_THROWS_AS(cycle_loss(g, identity_fn(), identity_fn(), Tensor(), xb), ContractError);
  }
  SUBCASE("shape-changing generator is a contract error") {
    Graph g;
    ApplyFn bad = [](Graph& gg, const Tensor& x) {
      return reshape(gg, mean_axis(gg, x, 0), {1});
    };
    CHECK_THROWS_AS(cycle_loss(g, bad, identity_fn(), xa, xb), ContractError);
  }
}

TEST_CASE("identity loss closed forms") {
  Tensor xa = scalar_batch({1.0, 2.0});
  Tensor xb = scalar_batch({-1.0, 5.0});
  SUBCASE("identity generators give zero") {
    Graph g;
    CHECK(identity_loss(g, identity_fn(), identity_fn(), xa, xb).item() == 0.0);
  }
  SUBCASE("+2 shifts in both directions give 4") {
    Graph g;
    CHECK(identity_loss(g, shift_by(2.0), shift_by(2.0), xa, xb).item() ==
          doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("batch order permutation does not change the loss") {
    Graph g1, g2;
    Tensor xa_perm = scalar_batch({2.0, 1.0});
    Scalar v1 = identity_loss(g1, shift_by(0.7), shift_by(-0.3), xa, xb).item();
    Scalar v2 = identity_loss(g2, shift_by(0.7), shift_by(-0.3), xa_perm, xb).item();
    CHECK(v1 == doctest::Approx(v2).epsilon(1e-15));
  }
}

TEST_CASE("adversarial losses: hand-computed and boundary cases") {
  Tensor xa = scalar_batch({0.2});
  Tensor xb = scalar_batch({-0.4});
  SUBCASE("constant-half discriminator gives ln(1/2) per term") {
    Graph g;
    auto adv = adversarial_losses(g, constant_disc(0.5), constant_disc(0.5),
                                  shift_by(1.0), shift_by(-1.0), xa, xb);
    Scalar ln_half = std::log(0.5);
    CHECK(adv.l_adv_a == doctest::Approx(2.0 * ln_half).epsilon(1e-12));
    CHECK(adv.l_adv_b == doctest::Approx(2.0 * ln_half).epsilon(1e-12));
    CHECK(adv.d_loss.item() == doctest::Approx(-4.0 * ln_half).epsilon(1e-12));
    CHECK(adv.g_loss.item() == doctest::Approx(2.0 * ln_half).epsilon(1e-12));
  }
  SUBCASE("perfect discriminator drives d_loss to zero from above") {
    DiscFn perfect = [&](Graph&, const Tensor& x) {
      // reals are the exact batch values; anything else is fake
      bool is_real = x.value() == xa.value() || x.value() == xb.value();
      DiscriminatorOutput out;
      out.utterance = Tensor::from({x.shape()[0]},
                                   std::vector<Scalar>(x.shape()[0], is_real ? 1.0 : 0.0));
      return out;
    };
    Graph g;
    auto adv = adversarial_losses(g, perfect, perfect, shift_by(1.0), shift_by(1.0), xa, xb);
    CHECK(adv.d_loss.item() > 0.0);
    CHECK(adv.d_loss.item() < 1e-5);  // 4 * |ln(1 - 1e-7)|
  }
  SUBCASE("score outside [0,1] is a numeric-domain error") {
    Graph g;
    CHECK_THROWS_AS(adversarial_losses(g, constant_disc(1.5), constant_disc(0.5),
                                       shift_by(1.0), shift_by(1.0), xa, xb),
                    NumericError);
  }
  SUBCASE("fine-grained scores contribute an equally weighted frame term") {
    DiscFn with_frames = [](Graph&, const Tensor& x) {
      DiscriminatorOutput out;
      std::size_t b = x.shape()[0];
      out.utterance = Tensor::from({b}, std::vector<Scalar>(b, 0.5));
      out.frames = Tensor::from({b, 4}, std::vector<Scalar>(b * 4, 0.25));
      return out;
    };
    Graph g;
    auto adv = adversarial_losses(g, with_frames, with_frames, shift_by(1.0),
                                  shift_by(1.0), xa, xb);
    // per discriminator: (ln .5 + ln .25) real + (ln .5 + ln .75) fake
    Scalar expect = std::log(0.5) + std::log(0.25) + std::log(0.5) + std::log(0.75);
    CHECK(adv.l_adv_a == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("total loss composition follows the weighted sum") {
  SUBCASE("alpha=1 beta=1 on parts (2,3,4) gives 9") {
    auto b = total_loss(3.0, 4.0, 1.0, 1.0, {1.0, 1.0});
    CHECK(b.total == doctest::Approx(9.0).epsilon(1e-15));
  }
  SUBCASE("beta=0.5 after the schedule switch gives 7") {
    auto b = total_loss(3.0, 4.0, 1.0, 1.0, {1.0, 0.5});
    CHECK(b.total == doctest::Approx(7.0).epsilon(1e-15));
  }
  SUBCASE("alpha=0 beta=0 leaves only the adversarial part") {
    auto b = total_loss(3.0, 4.0, 1.5, 0.5, {0.0, 0.0});
    CHECK(b.total == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("bundle identity holds to 1e-12") {
    auto b = total_loss(0.37, 1.21, -0.5, -0.25, {1.0, 0.5});
    CHECK(std::fabs(b.total - (b.l_adv_a + b.l_adv_b + 1.0 * b.l_cyc + 0.5 * b.l_id)) <
          1e-12);
  }
  SUBCASE("NaN parts are rejected with the part named") {
    CHECK_THROWS_WITH_AS(
        total_loss(std::nan(""), 0.0, 0.0, 0.0, {1.0, 1.0}),
        doctest::Contains("l_cyc"), NumericError);
    CHECK_THROWS_WITH_AS(
        total_loss(0.0, 0.0, std::nan(""), 0.0, {1.0, 1.0}),
        doctest::Contains("l_adv_A"), NumericError);
  }
  SUBCASE("negative weights are rejected") {
    CHECK_THROWS_AS(total_loss(1.0, 1.0, 0.0, 0.0, {-1.0, 1.0}), ContractError);
  }
}

TEST_CASE("cycle and identity losses are non-negative, zero only at exact match") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    Rng rng(seed);
    Tensor xa = scalar_batch({rng.normal(), rng.normal()});
    Tensor xb = scalar_batch({rng.normal()});
    Scalar c = rng.uniform(0.1, 2.0);
    Graph g;
    Scalar cyc = cycle_loss(g, shift_by(c), shift_by(0.0), xa, xb).item();
    Scalar idl = identity_loss(g, shift_by(c), shift_by(c), xa, xb).item();
    CHECK(cyc > 0.0);
    CHECK(idl > 0.0);
    CHECK(cyc == doctest::Approx(2.0 * c).epsilon(1e-12));
  }
}

TEST_CASE("generator-loss gradients match finite differences on a tiny model") {
  GeneratorConfig cfg;
  cfg.in_channels = 3;
  cfg.gated_kernel = 3;
  cfg.gated_channels = 4;
  cfg.gated_repeat = 1;
  cfg.res_hidden = 4;
  cfg.res_repeat = 1;
  cfg.use_transformer = false;
  cfg.post_kernel = 3;
  ParamMap pa = init_generator_params(cfg, "gab", 1);
  ParamMap pb = init_generator_params(cfg, "gba", 2);
  Tensor xa = Tensor::from({1, 3, 8}, test::random_vector(24, 3));
  Tensor xb = Tensor::from({1, 3, 8}, test::random_vector(24, 4));
  LossWeights w{1.0, 0.5};

  auto loss_value = [&]() {
    Graph g(5);
    ApplyFn ab = [&](Graph& gg, const Tensor& x) {
      return generator_forward(gg, pa, "gab", cfg, x);
    };
    ApplyFn ba = [&](Graph& gg, const Tensor& x) {
      return generator_forward(gg, pb, "gba", cfg, x);
    };
    Tensor cyc = cycle_loss(g, ab, ba, xa, xb);
    Tensor idl = identity_loss(g, ab, ba, xa, xb);
    auto adv = adversarial_losses(g, constant_disc(0.4), constant_disc(0.6), ab, ba, xa, xb);
    return weighted_generator_loss(g, adv.g_loss, cyc, idl, w).item();
  };

  Graph g(5);
  ApplyFn ab = [&](Graph& gg, const Tensor& x) {
    return generator_forward(gg, pa, "gab", cfg, x);
  };
  ApplyFn ba = [&](Graph& gg, const Tensor& x) {
    return generator_forward(gg, pb, "gba", cfg, x);
  };
  Tensor cyc = cycle_loss(g, ab, ba, xa, xb);
  Tensor idl = identity_loss(g, ab, ba, xa, xb);
  auto adv = adversarial_losses(g, constant_disc(0.4), constant_disc(0.6), ab, ba, xa, xb);
  g.backward(weighted_generator_loss(g, adv.g_loss, cyc, idl, w));

  for (const char* name : {"gab.post.w", "gab.blk0.conv.w", "gab.blk0.gate.b"}) {
    Tensor& p = pa[name];
    std::vector<Scalar> analytic = p.grad();
    p.zero_grad();
    pb["gba.post.w"].zero_grad();
    std::vector<Scalar> numeric = test::finite_difference_grad(p, loss_value);
    CAPTURE(name);
    CHECK(test::max_rel_error(analytic, numeric) < 1e-4);
  }
}
