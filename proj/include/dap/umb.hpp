#pragma once

#include <array>
#include <random>
#include <vector>

#include "dap/ad.hpp"
#include "dap/apb.hpp"
#include "dap/nn.hpp"

namespace dap::umb {

inline constexpr std::size_t kDefaultPixelBudget = 4096;

/// Non-local block: x + out(y) with
///   y_i = 1/P * sum_j (theta_i . phi_j) g_j
/// over the P pixels of the plane. theta, phi, g and out are 1x1 convs; out
/// starts at zero so the block is the identity until trained.
struct NonLocal {
  nn::Conv theta;
  nn::Conv phi;
  nn::Conv g;
  nn::Conv out;
  std::size_t pixel_budget = kDefaultPixelBudget;

  static NonLocal create(nn::ParamStore& store, const std::string& name, std::size_t channels,
                         std::mt19937_64& rng, std::size_t pixel_budget = kDefaultPixelBudget);

  ad::Var operator()(const nn::Bound& p, ad::Var x) const;
};

struct UmbConfig {
  std::size_t sources = 2;
  std::size_t label_channels = 1;  // 2 when the mask is concatenated
  std::size_t width = 8;           // working channels per source
  std::array<std::size_t, 3> feature_channels = {8, 16, 64};
  std::size_t pixel_budget = kDefaultPixelBudget;

  void validate() const;
};

/// Three stacked uncertainty blocks followed by a per-source decoder.
///
/// Stage 0 lifts every label to `width` channels at a quarter of the input
/// side (conv+pool twice) and runs a residual block. The label channel is
/// first divided by its per-frame peak (held constant): unit-mass maps are
/// ~1/(H*W) per pixel and would otherwise barely move the activations. Each stage then, for
/// every source n, concatenates [source n, the other sources in cyclic
/// order, adapted features], applies source n's non-local block and a 1x1
/// fuse conv back to `width` channels, and adds the result to source n's
/// current map. The decoder upsamples twice to full size and emits one
/// log-variance channel per source.
class Umb {
 public:
  Umb(const UmbConfig& config, nn::ParamStore& store, std::mt19937_64& rng);

  /// labels: N tensors [B, label_channels, H, W]. Returns N maps
  /// [B, width, H/4, W/4].
  std::vector<ad::Var> stage0(const nn::Bound& p, const std::vector<ad::Var>& labels,
                              ad::Var f0) const;
  /// The label-lifting half of stage 0, before the attention exchange.
  std::vector<ad::Var> lift(const nn::Bound& p, const std::vector<ad::Var>& labels) const;
  /// Refinement for stage t in {1, 2}.
  std::vector<ad::Var> stage(const nn::Bound& p, std::size_t t, const std::vector<ad::Var>& prev,
                             ad::Var features) const;
  std::vector<ad::Var> decode(const nn::Bound& p, const std::vector<ad::Var>& maps) const;

  /// Full branch: N log-variance maps [B, 1, H, W].
  std::vector<ad::Var> forward(const nn::Bound& p, const std::vector<ad::Var>& labels,
                               const apb::FeaturePyramid& pyramid) const;

  const UmbConfig& config() const { return config_; }

 private:
  struct SourceLift {
    nn::Conv conv1, conv2, res1, res2;
  };
  struct SourceDecoder {
    nn::Conv conv1, conv2;
  };
  struct Exchange {
    nn::Conv adapter;
    std::vector<NonLocal> attention;  // per source
    std::vector<nn::Conv> fuse;       // per source
  };

  std::vector<ad::Var> exchange(const nn::Bound& p, const Exchange& ex,
                                const std::vector<ad::Var>& maps, ad::Var features) const;

  UmbConfig config_;
  std::vector<SourceLift> lift_;
  std::array<Exchange, 3> stages_;
  std::vector<SourceDecoder> decoder_;
};

}  // namespace dap::umb
