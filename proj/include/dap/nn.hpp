#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dap/ad.hpp"
#include "dap/tensor.hpp"

namespace dap::nn {

/// Named, ordered collection of learnable tensors.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& value(std::size_t i) { return values_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// A ParamStore copied onto a tape as leaves.
class Bound {
 public:
  Bound(ad::Tape& tape, const ParamStore& store, bool requires_grad = true);

  ad::Var operator[](std::size_t i) const { return vars_.at(i); }
  ad::Tape& tape() const { return *tape_; }
  std::size_t size() const { return vars_.size(); }
  /// Gradients in store order, after tape().backward().
  std::vector<Tensor> grads() const;

 private:
  ad::Tape* tape_;
  std::vector<ad::Var> vars_;
};

enum class Init { KaimingUniform, Zero };

/// Square-kernel convolution with "same" padding and stride 1.
struct Conv {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 1;

  static Conv create(ParamStore& store, const std::string& name, std::size_t in,
                     std::size_t out, std::size_t kernel, Init init, std::mt19937_64& rng);

  ad::Var operator()(const Bound& p, ad::Var x) const;
};

/// Kaiming-uniform fill: U(-b, b) with b = sqrt(6 / fan_in). Biases stay zero.
void kaiming_uniform(Tensor& kernel, std::mt19937_64& rng);

}  // namespace dap::nn
