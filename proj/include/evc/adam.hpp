#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evc/tensor.hpp"

namespace evc {

using ParamMap = std::map<std::string, Tensor>;

struct AdamConfig {
  Scalar lr = 2e-4;
  Scalar beta1 = 0.5;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

// First/second moments per parameter name plus a shared step count.
struct AdamState {
  std::map<std::string, std::vector<Scalar>> m;
  std::map<std::string, std::vector<Scalar>> v;
  std::uint64_t step = 0;
};

// Single-array Adam update with bias correction. Moments and parameters are
// kept on the float32 grid so checkpoints reload bit-exactly.
void adam_update(std::vector<Scalar>& param, const std::vector<Scalar>& grad,
                 const AdamConfig& cfg, std::vector<Scalar>& m, std::vector<Scalar>& v,
                 std::uint64_t step);

// One optimizer step over every parameter in the map that has a gradient.
// Gradients are consumed (cleared) afterwards.
void adam_step(ParamMap& params, const AdamConfig& cfg, AdamState& state);

}  // namespace evc
