#include "dap/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dap/error.hpp"

namespace dap::ad {

Tensor finite_diff_gradient(const std::function<real(const Tensor&)>& f,
                            const Tensor& x, real step) {
  if (!(step > 0)) throw Error("finite_diff_gradient: step must be positive");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const real orig = probe[i];
    probe[i] = orig + step;
    const real up = f(probe);
    probe[i] = orig - step;
    const real down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2 * step);
  }
  return grad;
}

real relative_error(real analytic, real numeric, real floor) {
  const real scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

}  // namespace dap::ad
