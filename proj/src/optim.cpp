#include "dap/optim.hpp"

#include <cmath>
#include <numbers>

#include "dap/error.hpp"

namespace dap::train {

AdamState AdamState::zeros_like(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.push_back(Tensor::zeros(p.shape()));
    s.v.push_back(Tensor::zeros(p.shape()));
  }
  return s;
}

void adamw_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state,
                const AdamHyper& h) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw DimensionError("adamw_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.m[i].shape() ||
        params[i]->shape() != state.v[i].shape()) {
      throw DimensionError("adamw_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                           to_string(params[i]->shape()) + " vs gradient " +
                           to_string(grads[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  const double decay = 1.0 - h.lr * h.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      m[k] = static_cast<real>(h.beta1 * m[k] + (1.0 - h.beta1) * gk);
      v[k] = static_cast<real>(h.beta2 * v[k] + (1.0 - h.beta2) * gk * gk);
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] = static_cast<real>(p[k] * decay - h.lr * mhat / (std::sqrt(vhat) + h.eps));
    }
  }
}

double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup, double lr_max) {
  if (step >= total) return 0.0;
  if (step < warmup) return lr_max * static_cast<double>(step) / static_cast<double>(warmup);
  const double span = static_cast<double>(total - warmup);
  const double progress = static_cast<double>(step - warmup) / span;
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace dap::train
