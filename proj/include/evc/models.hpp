#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evc/adam.hpp"
#include "evc/tensor.hpp"

namespace evc {

enum class NormKind { None, Instance };
enum class InitKind { Normal02, FanIn };

// Fixed per-channel affine applied to network inputs and inverted on outputs;
// keeps raw feature magnitudes out of the optimization. Size 1 broadcasts.
struct FeatureConditioning {
  std::vector<Scalar> scale = {1.0};
  std::vector<Scalar> shift = {0.0};
};

struct GeneratorConfig {
  std::size_t in_channels = 0;
  std::size_t gated_kernel = 15;
  std::size_t gated_channels = 128;
  std::size_t gated_repeat = 2;
  std::size_t res_hidden = 256;
  std::size_t res_kernel = 3;
  std::size_t res_repeat = 2;
  std::size_t heads = 4;
  Scalar dropout = 0.1;
  std::size_t post_kernel = 15;
  bool use_transformer = true;
  NormKind norm = NormKind::Instance;
  Scalar norm_eps = 1e-5;
  InitKind init = InitKind::Normal02;
  FeatureConditioning cond;
};

struct DiscriminatorConfig {
  bool two_d = false;
  std::size_t in_channels = 0;
  std::size_t kernel = 5;                         // per axis for 2-D
  std::vector<std::size_t> channels = {64, 128, 256};
  std::size_t stride_freq = 1;                    // 2-D only
  std::size_t stride_time = 2;
  bool fine_grained = false;
  NormKind norm = NormKind::Instance;
  Scalar norm_eps = 1e-5;
  InitKind init = InitKind::Normal02;
  FeatureConditioning cond;
};

// Parameter construction. Names and shapes are a pure function of the config;
// values are seeded draws (std 0.02 or fan-in scaled), zero biases, unit
// gammas. All values land on the f32 grid.
ParamMap init_generator_params(const GeneratorConfig& cfg, const std::string& prefix,
                               std::uint64_t seed);
ParamMap init_discriminator_params(const DiscriminatorConfig& cfg,
                                   const std::string& prefix, std::uint64_t seed);

// Debug generator that reproduces its input exactly: delta kernels, saturated
// gates, zeroed residual/transformer contributions. Requires norm == None and
// gated_channels == res_hidden >= in_channels.
ParamMap identity_generator_params(const GeneratorConfig& cfg, const std::string& prefix);

// x[B,C,T] -> y[B,C,T]; dropout active only when `training`.
Tensor generator_forward(Graph& g, const ParamMap& params, const std::string& prefix,
                         const GeneratorConfig& cfg, const Tensor& x,
                         bool training = false);

struct DiscriminatorOutput {
  Tensor utterance;               // [B], each strictly inside (0,1)
  std::optional<Tensor> frames;   // [B,T'] when fine_grained
};

// 1-D nets take x[B,C,T]; 2-D nets take x[B,1,F,T].
DiscriminatorOutput discriminator_forward(Graph& g, const ParamMap& params,
                                          const std::string& prefix,
                                          const DiscriminatorConfig& cfg,
                                          const Tensor& x);

// Frame-score length after the three stride_time blocks.
std::size_t discriminator_frame_count(const DiscriminatorConfig& cfg, std::size_t T);

enum class Variant { Base, CL, All };

Variant parse_variant(const std::string& s);
std::string variant_name(Variant v);

// Size knobs for one emotion-pair suite; defaults follow the reference
// configuration, toy runs shrink them.
struct SuiteHyper {
  std::size_t envelope_bins = 513;
  std::size_t spec_gated_channels = 128;
  std::size_t spec_gated_kernel = 15;
  std::size_t spec_res_hidden = 256;
  std::size_t spec_heads = 4;
  Scalar spec_dropout = 0.1;
  std::size_t f0_gated_channels = 128;
  std::size_t f0_gated_kernel = 15;
  std::size_t f0_res_hidden = 256;
  std::vector<std::size_t> spec_disc_channels = {64, 128, 256};
  std::vector<std::size_t> f0_disc_channels = {4, 8, 16};
  std::size_t disc_kernel = 5;
  std::size_t spec_disc_kernel = 3;
  std::size_t spec_disc_stride_freq = 1;
  NormKind spec_gen_norm = NormKind::Instance;
  NormKind f0_gen_norm = NormKind::Instance;
  NormKind disc_norm = NormKind::None;
  InitKind spec_init = InitKind::Normal02;
  InitKind f0_init = InitKind::Normal02;
  FeatureConditioning env_cond;   // envelope stream conditioning
  FeatureConditioning f0_cond;    // CWT stream conditioning (per scale row)
};

// Default per-scale conditioning for the 10 CWT rows.
FeatureConditioning default_f0_conditioning();
// Envelope conditioning for log-power features.
FeatureConditioning default_envelope_conditioning();

// The four generators and four discriminators of one emotion pair.
// Prefixes: spec.gab, spec.gba, spec.da, spec.db, f0.gab, f0.gba, f0.da, f0.db.
struct ModelSuite {
  Variant variant = Variant::Base;
  GeneratorConfig spec_gen;
  GeneratorConfig f0_gen;
  DiscriminatorConfig spec_disc;
  DiscriminatorConfig f0_disc;
  ParamMap params;
};

ModelSuite build_model_suite(Variant variant, const SuiteHyper& hyper,
                             std::uint64_t seed);

// Stable hash of variant plus every architecture field; stored in checkpoints
// and checked on load.
std::string suite_config_hash(const ModelSuite& suite);

}  // namespace evc
