#pragma once

#include <functional>

#include "dap/tensor.hpp"

namespace dap::ad {

/// Central-difference gradient of a scalar function:
/// (f(x + h e_i) - f(x - h e_i)) / 2h for every element i.
Tensor finite_diff_gradient(const std::function<real(const Tensor&)>& f,
                            const Tensor& x, real step = real(1e-5));

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero
/// up to round-off from reporting spurious relative error.
real relative_error(real analytic, real numeric, real floor = real(1e-6));

}  // namespace dap::ad
