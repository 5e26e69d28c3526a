#pragma once

#include <functional>
#include <optional>

#include "evc/models.hpp"
#include "evc/tensor.hpp"

namespace evc {

struct LossWeights {
  Scalar alpha = 1.0;  // cycle weight
  Scalar beta = 1.0;   // identity weight
};

// The four scalar losses of one training step plus their weighted total.
struct LossBundle {
  Scalar l_cyc = 0.0;
  Scalar l_id = 0.0;
  Scalar l_adv_a = 0.0;
  Scalar l_adv_b = 0.0;
  Scalar total = 0.0;
};

// Generator application, e.g. a bound generator_forward.
using ApplyFn = std::function<Tensor(Graph&, const Tensor&)>;
// Discriminator application returning utterance (and optional frame) scores.
using DiscFn = std::function<DiscriminatorOutput(Graph&, const Tensor&)>;

// Non-grad copy; cuts the tape between generator and discriminator phases.
Tensor detach(const Tensor& t);

// mean L1 of G_ba(G_ab(x_a)) - x_a plus mean L1 of G_ab(G_ba(x_b)) - x_b.
Tensor cycle_loss(Graph& g, const ApplyFn& g_ab, const ApplyFn& g_ba, const Tensor& batch_a,
                  const Tensor& batch_b);

// mean L1 of G_ba(x_a) - x_a plus mean L1 of G_ab(x_b) - x_b.
Tensor identity_loss(Graph& g, const ApplyFn& g_ab, const ApplyFn& g_ba,
                     const Tensor& batch_a, const Tensor& batch_b);

struct AdversarialLosses {
  Tensor d_loss;        // discriminators minimize (fakes detached)
  Tensor g_loss;        // generators minimize: E[log(1 - D(fake))], fakes attached
  Scalar l_adv_a = 0.0; // E[log D_A(x_a)] + E[log(1 - D_A(G_ba(x_b)))]
  Scalar l_adv_b = 0.0; // E[log D_B(x_b)] + E[log(1 - D_B(G_ab(x_a)))]
  Tensor fake_a;        // G_ba(x_b), attached
  Tensor fake_b;        // G_ab(x_a), attached
};

// Skips the side of the pair a training phase does not need.
enum class AdvMode { Full, DiscriminatorOnly, GeneratorOnly };

// Binary cross entropy adversarial pair. Fine-grained frame scores, when the
// discriminator emits them, contribute a frame-averaged BCE term weighted
// equally with the utterance term.
AdversarialLosses adversarial_losses(Graph& g, const DiscFn& d_a, const DiscFn& d_b,
                                     const ApplyFn& g_ab, const ApplyFn& g_ba,
                                     const Tensor& batch_a, const Tensor& batch_b,
                                     AdvMode mode = AdvMode::Full);

// mean L1 distance with a reconstruction-shape contract check.
Tensor l1_distance(Graph& g, const Tensor& a, const Tensor& b);

// The generator-side term for one discriminator verdict on a fake:
// mean log(1 - D(fake)), plus the frame term when present.
Tensor generator_fake_score_loss(Graph& g, const DiscriminatorOutput& out);

// The discriminator-side pair of terms for one (real, fake) verdict.
Tensor discriminator_score_loss(Graph& g, const DiscriminatorOutput& real,
                                const DiscriminatorOutput& fake);

// L = L_adv^A + L_adv^B + alpha L_cyc + beta L_id; throws NumericError naming
// the first non-finite part.
LossBundle total_loss(Scalar l_cyc, Scalar l_id, Scalar l_adv_a, Scalar l_adv_b,
                      const LossWeights& weights);

// Tensor-level generator objective: g_adv + alpha * cyc + beta * id.
Tensor weighted_generator_loss(Graph& g, const Tensor& g_adv, const Tensor& cyc,
                               const Tensor& id, const LossWeights& weights);

}  // namespace evc
