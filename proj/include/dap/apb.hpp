#pragma once

#include <array>
#include <random>

#include "dap/ad.hpp"
#include "dap/attention_map.hpp"
#include "dap/nn.hpp"

namespace dap::apb {

struct ApbConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t base_channels = 8;
  std::array<std::size_t, 5> multipliers = {1, 2, 4, 8, 8};

  std::size_t channels(std::size_t stage) const { return base_channels * multipliers.at(stage); }
  void validate() const;
};

/// Encoder features from stages 1, 2 and 4, each resampled to a quarter of
/// the input side length.
struct FeaturePyramid {
  ad::Var f0;
  ad::Var f1;
  ad::Var f2;
};

struct ApbOutput {
  FeaturePyramid pyramid;
  ad::Var logits;  // [B, 1, H, W], before the spatial softmax
};

/// Five-stage U-Net: two 3x3 conv+relu per stage, stages 2-5 entered by 2x2
/// average pooling; the decoder upsamples, concatenates the matching encoder
/// stage and applies two 3x3 conv+relu. A readout head maps the top decoder
/// level to one logit channel.
class Apb {
 public:
  Apb(const ApbConfig& config, nn::ParamStore& store, std::mt19937_64& rng);

  ApbOutput forward(const nn::Bound& p, ad::Var frame) const;

  /// 3x3 conv, relu, 1x1 conv to one channel. The last conv starts at zero
  /// so an untrained model predicts the uniform map.
  ad::Var readout(const nn::Bound& p, ad::Var features) const;

  const ApbConfig& config() const { return config_; }
  std::array<std::size_t, 3> pyramid_channels() const;

 private:
  struct Block {
    nn::Conv a;
    nn::Conv b;
  };
  ApbConfig config_;
  std::array<Block, 5> encoder_;
  std::array<Block, 4> decoder_;  // decoder_[i] produces stage i resolution
  nn::Conv readout_hidden_;
  nn::Conv readout_out_;
};

/// Probability map for one [3, H, W] frame.
io::AttentionMap predict(const Apb& apb, const nn::ParamStore& params, const Tensor& frame);

}  // namespace dap::apb
