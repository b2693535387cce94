#include "dap/model.hpp"

#include "dap/error.hpp"

namespace dap::model {

namespace {

umb::UmbConfig umb_config(const ModelConfig& c, const std::array<std::size_t, 3>& features) {
  umb::UmbConfig u;
  u.sources = c.sources;
  u.label_channels = c.label_channels;
  u.width = c.umb_width;
  u.feature_channels = features;
  u.pixel_budget = c.pixel_budget;
  return u;
}

std::array<std::size_t, 3> pyramid_channels(const apb::ApbConfig& c) {
  return {c.channels(0), c.channels(1), c.channels(3)};
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      rng_(seed),
      apb_(config.apb, params_, rng_),
      umb_(umb_config(config, pyramid_channels(config.apb)), params_, rng_) {}

Model::Output Model::forward(const nn::Bound& p, ad::Var frames,
                             const std::vector<ad::Var>& umb_inputs) const {
  Output out;
  out.apb = apb_.forward(p, frames);
  out.saliency = ad::spatial_softmax(out.apb.logits);
  out.log_variance = umb_.forward(p, umb_inputs, out.apb.pyramid);
  out.log_variance_stacked = ad::concat_channels(out.log_variance);
  return out;
}

io::AttentionMap Model::predict(const Tensor& frame) const {
  return apb::predict(apb_, params_, frame);
}

std::vector<io::AttentionMap> Model::predict_batch(const Tensor& frames) const {
  require_rank4(frames, "predict_batch");
  ad::Tape tape;
  nn::Bound p(tape, params_, false);
  ad::Var s = ad::spatial_softmax(apb_.forward(p, tape.constant(frames)).logits);
  std::vector<io::AttentionMap> out;
  for (std::size_t b = 0; b < frames.dim(0); ++b) {
    out.push_back(io::from_tensor(s.value(), b, 0, true));
  }
  return out;
}

objective::UncertaintyMapSet Model::uncertainty_maps(const Output& out, std::size_t b) {
  objective::UncertaintyMapSet set;
  for (const auto& v : out.log_variance) {
    const io::AttentionMap m = io::from_tensor(v.value(), b, 0);
    set.width = m.width;
    set.height = m.height;
    set.maps.push_back(m.values);
  }
  return set;
}

}  // namespace dap::model
