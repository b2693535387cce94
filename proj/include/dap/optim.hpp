#pragma once

#include <cstddef>
#include <vector>

#include "dap/tensor.hpp"

namespace dap::train {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double eps = 1e-8;
};

/// First and second moments for a list of parameter tensors plus the step
/// counter used for bias correction.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;

  static AdamState zeros_like(const std::vector<Tensor>& params);
};

/// One AdamW update in place. Weight decay multiplies the weights by
/// (1 - lr * weight_decay) before the moment step and never enters m or v.
void adamw_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state,
                const AdamHyper& h);

/// Linear warmup from 0 to lr_max over `warmup` steps, then half-cosine
/// decay to 0 at `total`.
double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup, double lr_max);

}  // namespace dap::train
