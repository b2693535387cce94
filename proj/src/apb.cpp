#include "dap/apb.hpp"

#include "dap/error.hpp"

namespace dap::apb {

using nn::Conv;
using nn::Init;

void ApbConfig::validate() const {
  if (height < 16 || width < 16 || height % 16 || width % 16) {
    throw ConfigError("APB input size must be at least 16 and divisible by 16, got " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
  if (base_channels == 0) throw ConfigError("base_channels must be positive");
  for (auto m : multipliers) {
    if (m == 0) throw ConfigError("channel multipliers must be positive");
  }
}

Apb::Apb(const ApbConfig& config, nn::ParamStore& store, std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  std::size_t in = 3;
  for (std::size_t s = 0; s < 5; ++s) {
    const std::size_t c = config_.channels(s);
    const std::string name = "apb.enc" + std::to_string(s + 1);
    encoder_[s].a = Conv::create(store, name + ".conv1", in, c, 3, Init::KaimingUniform, rng);
    encoder_[s].b = Conv::create(store, name + ".conv2", c, c, 3, Init::KaimingUniform, rng);
    in = c;
  }
  for (std::size_t s = 4; s-- > 0;) {
    const std::size_t below = s == 3 ? config_.channels(4) : config_.channels(s + 1);
    const std::size_t c = config_.channels(s);
    const std::string name = "apb.dec" + std::to_string(s + 1);
    decoder_[s].a = Conv::create(store, name + ".conv1", below + c, c, 3, Init::KaimingUniform, rng);
    decoder_[s].b = Conv::create(store, name + ".conv2", c, c, 3, Init::KaimingUniform, rng);
  }
  const std::size_t top = config_.channels(0);
  readout_hidden_ = Conv::create(store, "apb.readout.conv1", top, top, 3, Init::KaimingUniform, rng);
  readout_out_ = Conv::create(store, "apb.readout.conv2", top, 1, 1, Init::Zero, rng);
}

std::array<std::size_t, 3> Apb::pyramid_channels() const {
  return {config_.channels(0), config_.channels(1), config_.channels(3)};
}

ad::Var Apb::readout(const nn::Bound& p, ad::Var features) const {
  return readout_out_(p, ad::relu(readout_hidden_(p, features)));
}

ApbOutput Apb::forward(const nn::Bound& p, ad::Var frame) const {
  const Tensor& x = frame.value();
  require_rank4(x, "apb frame");
  if (x.dim(1) != 3 || x.dim(2) != config_.height || x.dim(3) != config_.width) {
    throw DimensionError("APB expects [B, 3, " + std::to_string(config_.height) + ", " +
                         std::to_string(config_.width) + "], got " + to_string(x.shape()));
  }

  std::array<ad::Var, 5> skips;
  ad::Var h = frame;
  for (std::size_t s = 0; s < 5; ++s) {
    if (s > 0) h = ad::resample(h, ad::Resample::Down2);
    h = ad::relu(encoder_[s].a(p, h));
    h = ad::relu(encoder_[s].b(p, h));
    skips[s] = h;
  }

  for (std::size_t s = 4; s-- > 0;) {
    const ad::Var parts[] = {ad::resample(h, ad::Resample::Up2), skips[s]};
    h = ad::concat_channels(parts);
    h = ad::relu(decoder_[s].a(p, h));
    h = ad::relu(decoder_[s].b(p, h));
  }

  ApbOutput out;
  out.logits = readout(p, h);
  // Stage 1 is at full size, stage 2 at 1/2, stage 4 at 1/8.
  out.pyramid.f0 = ad::resample(ad::resample(skips[0], ad::Resample::Down2), ad::Resample::Down2);
  out.pyramid.f1 = ad::resample(skips[1], ad::Resample::Down2);
  out.pyramid.f2 = ad::resample(skips[3], ad::Resample::Up2);
  return out;
}

io::AttentionMap predict(const Apb& apb, const nn::ParamStore& params, const Tensor& frame) {
  if (frame.rank() != 3) {
    throw DimensionError("predict expects a [3, H, W] frame, got " + to_string(frame.shape()));
  }
  ad::Tape tape;
  nn::Bound p(tape, params, false);
  ad::Var x = tape.constant(frame.reshaped(Shape{1, frame.dim(0), frame.dim(1), frame.dim(2)}));
  ad::Var s = ad::spatial_softmax(apb.forward(p, x).logits);
  return io::from_tensor(s.value(), 0, 0, true);
}

}  // namespace dap::apb
