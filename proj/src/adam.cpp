#include "evc/adam.hpp"

#include <cmath>

#include "evc/errors.hpp"

namespace evc {

void adam_update(std::vector<Scalar>& param, const std::vector<Scalar>& grad,
                 const AdamConfig& cfg, std::vector<Scalar>& m, std::vector<Scalar>& v,
                 std::uint64_t step) {
  if (cfg.lr <= 0.0) throw ContractError("adam: lr must be > 0");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0) {
    throw ContractError("adam: beta1/beta2 must be in [0, 1)");
  }
  if (param.size() != grad.size()) {
    throw ShapeError("adam: parameter/gradient size mismatch");
  }
  if (m.size() != param.size()) m.assign(param.size(), 0.0);
  if (v.size() != param.size()) v.assign(param.size(), 0.0);
  Scalar bc1 = 1.0 - std::pow(cfg.beta1, static_cast<Scalar>(step));
  Scalar bc2 = 1.0 - std::pow(cfg.beta2, static_cast<Scalar>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    Scalar mhat = m[i] / bc1;
    Scalar vhat = v[i] / bc2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  quantize_f32(param);
  quantize_f32(m);
  quantize_f32(v);
}

void adam_step(ParamMap& params, const AdamConfig& cfg, AdamState& state) {
  state.step += 1;
  for (auto& [name, tensor] : params) {
    if (!tensor.has_grad()) continue;
    adam_update(tensor.mutable_value(), tensor.grad(), cfg, state.m[name],
                state.v[name], state.step);
    tensor.zero_grad();
  }
}

}  // namespace evc
