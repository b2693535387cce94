#pragma once

#include <cstdint>
#include <vector>

#include "dap/apb.hpp"
#include "dap/nn.hpp"
#include "dap/objective.hpp"
#include "dap/umb.hpp"

namespace dap::model {

struct ModelConfig {
  apb::ApbConfig apb;
  std::size_t sources = 2;
  std::size_t label_channels = 1;
  std::size_t umb_width = 8;
  std::size_t pixel_budget = umb::kDefaultPixelBudget;
};

/// Attention prediction branch plus uncertainty mining branch sharing one
/// parameter store. Parameters are initialised from `seed`.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  struct Output {
    apb::ApbOutput apb;
    ad::Var saliency;                   // [B, 1, H, W], spatial softmax of the logits
    std::vector<ad::Var> log_variance;  // N x [B, 1, H, W]
    ad::Var log_variance_stacked;       // [B, N, H, W]
  };

  /// Training-time forward. `umb_inputs` holds one [B, label_channels, H, W]
  /// tensor per source.
  Output forward(const nn::Bound& p, ad::Var frames, const std::vector<ad::Var>& umb_inputs) const;

  /// Test-time path: only the prediction branch runs.
  io::AttentionMap predict(const Tensor& frame) const;
  /// Batched test-time path for [B, 3, H, W] frames.
  std::vector<io::AttentionMap> predict_batch(const Tensor& frames) const;

  /// Log-variance maps of frame b from a forward output.
  static objective::UncertaintyMapSet uncertainty_maps(const Output& out, std::size_t b);

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const apb::Apb& apb() const { return apb_; }
  const umb::Umb& umb() const { return umb_; }

 private:
  ModelConfig config_;
  nn::ParamStore params_;
  std::mt19937_64 rng_;
  apb::Apb apb_;
  umb::Umb umb_;
};

}  // namespace dap::model
