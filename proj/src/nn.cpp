#include "dap/nn.hpp"

#include <cmath>

#include "dap/error.hpp"

namespace dap::nn {

std::size_t ParamStore::add(std::string name, Tensor value) {
  if (find(name)) throw Error("duplicate parameter name " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

Bound::Bound(ad::Tape& tape, const ParamStore& store, bool requires_grad) : tape_(&tape) {
  vars_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    vars_.push_back(tape.leaf(store.value(i), requires_grad));
  }
}

std::vector<Tensor> Bound::grads() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (const auto& v : vars_) out.push_back(tape_->grad(v));
  return out;
}

void kaiming_uniform(Tensor& kernel, std::mt19937_64& rng) {
  const std::size_t fan_in = kernel.size() / kernel.dim(0);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (real& v : kernel.data()) v = static_cast<real>(dist(rng));
}

Conv Conv::create(ParamStore& store, const std::string& name, std::size_t in,
                  std::size_t out, std::size_t kernel, Init init, std::mt19937_64& rng) {
  Conv c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  Tensor w(Shape{out, in, kernel, kernel});
  if (init == Init::KaimingUniform) kaiming_uniform(w, rng);
  c.weight = store.add(name + ".weight", std::move(w));
  c.bias = store.add(name + ".bias", Tensor(Shape{out}));
  return c;
}

ad::Var Conv::operator()(const Bound& p, ad::Var x) const {
  return ad::conv2d(x, p[weight], p[bias], 1, ad::Padding::Same);
}

}  // namespace dap::nn
