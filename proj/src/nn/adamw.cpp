// SPDX-License-Identifier: Apache-2.0
#include "fedsim/nn/adamw.hpp"

#include <cmath>

#include "fedsim/common/error.hpp"

namespace fedsim::nn {

AdamWState adamw_init(std::span<Param* const> params, const AdamWOptions& opts) {
  AdamWState s;
  s.lr = opts.lr;
  s.beta1 = opts.beta1;
  s.beta2 = opts.beta2;
  s.eps = opts.eps;
  s.weight_decay = opts.weight_decay;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Param* p : params) {
    s.m.push_back(Tensor::zeros_like(p->value));
    s.v.push_back(Tensor::zeros_like(p->value));
  }
  s.initialized = true;
  return s;
}

void adamw_step(std::span<Param* const> params, AdamWState& s) {
  if (!s.initialized) throw ContractError("adamw_step: optimizer state not initialized");
  if (s.m.size() != params.size()) {
    throw ContractError("adamw_step: state tracks " + std::to_string(s.m.size()) +
                        " params, got " + std::to_string(params.size()));
  }
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double bc1 = 1.0 - std::pow(s.beta1, t);
  const double bc2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (!p.trainable) continue;
    if (p.grad.shape() != p.value.shape() || s.m[i].shape() != p.value.shape()) {
      throw DimensionError("adamw_step: shape drift on " + p.path());
    }
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = s.m[i].data();
    auto v = s.v[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
      v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= s.lr * (mhat / (std::sqrt(vhat) + s.eps) + s.weight_decay * w[k]);
    }
  }
}

}  // namespace fedsim::nn
