#include "evc/losses.hpp"

#include <cmath>
#include <string>

#include "evc/errors.hpp"

namespace evc {

namespace {

constexpr Scalar kScoreClamp = 1e-7;

void validate_scores(const Tensor& scores) {
  for (Scalar v : scores.value()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw NumericError("adversarial loss: discriminator score " + std::to_string(v) +
                         " outside (0,1)");
    }
  }
}

void validate_output(const DiscriminatorOutput& out) {
  validate_scores(out.utterance);
  if (out.frames) validate_scores(*out.frames);
}

// mean log D, clamped into the open interval
Tensor mean_log(Graph& g, const Tensor& scores) {
  return mean(g, log(g, clamp(g, scores, kScoreClamp, 1.0 - kScoreClamp)));
}

// mean log (1 - D)
Tensor mean_log_one_minus(Graph& g, const Tensor& scores) {
  Tensor one_minus = add_scalar(g, neg(g, scores), 1.0);
  return mean(g, log(g, clamp(g, one_minus, kScoreClamp, 1.0 - kScoreClamp)));
}

// utterance term plus (when present) equally weighted frame term
Tensor real_term(Graph& g, const DiscriminatorOutput& out) {
  Tensor t = mean_log(g, out.utterance);
  if (out.frames) t = add(g, t, mean_log(g, *out.frames));
  return t;
}

Tensor fake_term(Graph& g, const DiscriminatorOutput& out) {
  Tensor t = mean_log_one_minus(g, out.utterance);
  if (out.frames) t = add(g, t, mean_log_one_minus(g, *out.frames));
  return t;
}

Tensor l1_mean(Graph& g, const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(what) + ": reconstruction shape " +
                        shape_str(a.shape()) + " does not match input " +
                        shape_str(b.shape()));
  }
  return mean(g, abs(g, sub(g, a, b)));
}

}  // namespace

Tensor detach(const Tensor& t) { return Tensor::from(t.shape(), t.value()); }

Tensor l1_distance(Graph& g, const Tensor& a, const Tensor& b) {
  return l1_mean(g, a, b, "l1_distance");
}

Tensor generator_fake_score_loss(Graph& g, const DiscriminatorOutput& out) {
  validate_output(out);
  return fake_term(g, out);
}

Tensor discriminator_score_loss(Graph& g, const DiscriminatorOutput& real,
                                const DiscriminatorOutput& fake) {
  validate_output(real);
  validate_output(fake);
  return add(g, real_term(g, real), fake_term(g, fake));
}

Tensor cycle_loss(Graph& g, const ApplyFn& g_ab, const ApplyFn& g_ba, const Tensor& batch_a,
                  const Tensor& batch_b) {
  if (batch_a.numel() == 0 || batch_b.numel() == 0) {
    throw InputError("cycle_loss: empty batch");
  }
  Tensor rec_a = g_ba(g, g_ab(g, batch_a));
  Tensor rec_b = g_ab(g, g_ba(g, batch_b));
  return add(g, l1_mean(g, rec_a, batch_a, "cycle_loss"),
             l1_mean(g, rec_b, batch_b, "cycle_loss"));
}

Tensor identity_loss(Graph& g, const ApplyFn& g_ab, const ApplyFn& g_ba,
                     const Tensor& batch_a, const Tensor& batch_b) {
  if (batch_a.numel() == 0 || batch_b.numel() == 0) {
    throw InputError("identity_loss: empty batch");
  }
  Tensor id_a = g_ba(g, batch_a);
  Tensor id_b = g_ab(g, batch_b);
  return add(g, l1_mean(g, id_a, batch_a, "identity_loss"),
             l1_mean(g, id_b, batch_b, "identity_loss"));
}

AdversarialLosses adversarial_losses(Graph& g, const DiscFn& d_a, const DiscFn& d_b,
                                     const ApplyFn& g_ab, const ApplyFn& g_ba,
                                     const Tensor& batch_a, const Tensor& batch_b,
                                     AdvMode mode) {
  AdversarialLosses out;
  out.fake_b = g_ab(g, batch_a);
  out.fake_a = g_ba(g, batch_b);

  if (mode != AdvMode::GeneratorOnly) {
    DiscriminatorOutput da_real = d_a(g, batch_a);
    DiscriminatorOutput db_real = d_b(g, batch_b);
    DiscriminatorOutput da_fake_det = d_a(g, detach(out.fake_a));
    DiscriminatorOutput db_fake_det = d_b(g, detach(out.fake_b));
    validate_output(da_real);
    validate_output(db_real);
    validate_output(da_fake_det);
    validate_output(db_fake_det);

    Tensor adv_a = add(g, real_term(g, da_real), fake_term(g, da_fake_det));
    Tensor adv_b = add(g, real_term(g, db_real), fake_term(g, db_fake_det));
    out.l_adv_a = adv_a.item();
    out.l_adv_b = adv_b.item();
    // discriminators maximize; the optimizer minimizes the negation
    out.d_loss = neg(g, add(g, adv_a, adv_b));
  }

  if (mode != AdvMode::DiscriminatorOnly) {
    DiscriminatorOutput da_fake = d_a(g, out.fake_a);
    DiscriminatorOutput db_fake = d_b(g, out.fake_b);
    validate_output(da_fake);
    validate_output(db_fake);
    out.g_loss = add(g, fake_term(g, da_fake), fake_term(g, db_fake));
  }
  return out;
}

LossBundle total_loss(Scalar l_cyc, Scalar l_id, Scalar l_adv_a, Scalar l_adv_b,
                      const LossWeights& weights) {
  if (weights.alpha < 0.0 || weights.beta < 0.0) {
    throw ContractError("total_loss: alpha/beta must be non-negative");
  }
  auto check = [](Scalar v, const char* part) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("total_loss: non-finite ") + part);
    }
  };
  check(l_cyc, "l_cyc");
  check(l_id, "l_id");
  check(l_adv_a, "l_adv_A");
  check(l_adv_b, "l_adv_B");
  LossBundle b;
  b.l_cyc = l_cyc;
  b.l_id = l_id;
  b.l_adv_a = l_adv_a;
  b.l_adv_b = l_adv_b;
  b.total = l_adv_a + l_adv_b + weights.alpha * l_cyc + weights.beta * l_id;
  return b;
}

Tensor weighted_generator_loss(Graph& g, const Tensor& g_adv, const Tensor& cyc,
                               const Tensor& id, const LossWeights& weights) {
  return add(g, g_adv, add(g, scale(g, cyc, weights.alpha), scale(g, id, weights.beta)));
}

}  // namespace evc
