#include "dap/umb.hpp"

#include <algorithm>

#include "dap/error.hpp"

namespace dap::umb {

using nn::Conv;
using nn::Init;

namespace {

// Labels are spatial distributions with values near 1/(H*W), far below
// the unit scale the initialisation assumes. Each frame's label channel is
// divided by its peak so it spans [0, 1]; the factor is treated as a
// constant. A mask channel appended by the concat strategy passes unchanged.
ad::Var scale_label(ad::Var x) {
  const Tensor& v = x.value();
  const std::size_t batch = v.dim(0), channels = v.dim(1), plane = v.dim(2) * v.dim(3);
  Tensor k(v.shape(), real(1));
  for (std::size_t b = 0; b < batch; ++b) {
    const auto label = v.data().subspan(b * channels * plane, plane);
    const real peak = *std::max_element(label.begin(), label.end());
    const real inv = peak > 0 ? real(1) / peak : real(1);
    std::fill_n(k.data().begin() + static_cast<std::ptrdiff_t>(b * channels * plane), plane, inv);
  }
  return ad::mul(x, x.tape().constant(std::move(k)));
}

}  // namespace

NonLocal NonLocal::create(nn::ParamStore& store, const std::string& name, std::size_t channels,
                          std::mt19937_64& rng, std::size_t pixel_budget) {
  if (channels == 0 || channels % 2) {
    throw DimensionError("non-local block needs an even channel count, got " +
                         std::to_string(channels));
  }
  const std::size_t inner = channels / 2;
  NonLocal nl;
  nl.theta = Conv::create(store, name + ".theta", channels, inner, 1, Init::KaimingUniform, rng);
  nl.phi = Conv::create(store, name + ".phi", channels, inner, 1, Init::KaimingUniform, rng);
  nl.g = Conv::create(store, name + ".g", channels, inner, 1, Init::KaimingUniform, rng);
  nl.out = Conv::create(store, name + ".out", inner, channels, 1, Init::Zero, rng);
  nl.pixel_budget = pixel_budget;
  return nl;
}

ad::Var NonLocal::operator()(const nn::Bound& p, ad::Var x) const {
  const Tensor& xv = x.value();
  require_rank4(xv, "non-local input");
  const std::size_t batch = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t pixels = h * w;
  if (pixels > pixel_budget) {
    throw DimensionError("non-local plane of " + std::to_string(pixels) +
                         " pixels exceeds the budget of " + std::to_string(pixel_budget));
  }
  if (c != theta.in) {
    throw DimensionError("non-local block built for " + std::to_string(theta.in) +
                         " channels, got " + std::to_string(c));
  }
  const std::size_t inner = theta.out;
  const Shape flat{batch, inner, pixels};
  ad::Var th = ad::reshape(theta(p, x), flat);
  ad::Var ph = ad::reshape(phi(p, x), flat);
  ad::Var gv = ad::reshape(g(p, x), flat);
  ad::Var sim = ad::bmm(th, ph, true, false);      // [B, P, P], sim[i][j] = theta_i . phi_j
  ad::Var agg = ad::bmm(gv, sim, false, true);     // [B, inner, P], sum_j g_j sim[i][j]
  agg = ad::scalar_mul(agg, real(1) / static_cast<real>(pixels));
  ad::Var y = ad::reshape(agg, Shape{batch, inner, h, w});
  return ad::add(x, out(p, y));
}

void UmbConfig::validate() const {
  if (sources == 0) throw ConfigError("UMB needs at least one source");
  if (label_channels == 0) throw ConfigError("UMB label_channels must be positive");
  if (width == 0 || ((sources + 1) * width) % 2) {
    throw ConfigError("UMB width must make the concatenated channel count even");
  }
}

Umb::Umb(const UmbConfig& config, nn::ParamStore& store, std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  const std::size_t w = config_.width;
  const std::size_t n = config_.sources;
  const std::size_t merged = (n + 1) * w;

  for (std::size_t s = 0; s < n; ++s) {
    const std::string name = "umb.src" + std::to_string(s) + ".lift";
    SourceLift l;
    l.conv1 = Conv::create(store, name + ".conv1", config_.label_channels, w, 3, Init::KaimingUniform, rng);
    l.conv2 = Conv::create(store, name + ".conv2", w, w, 3, Init::KaimingUniform, rng);
    l.res1 = Conv::create(store, name + ".res1", w, w, 3, Init::KaimingUniform, rng);
    l.res2 = Conv::create(store, name + ".res2", w, w, 3, Init::KaimingUniform, rng);
    lift_.push_back(l);
  }
  for (std::size_t t = 0; t < 3; ++t) {
    const std::string name = "umb.stage" + std::to_string(t);
    Exchange& ex = stages_[t];
    ex.adapter = Conv::create(store, name + ".adapter", config_.feature_channels[t], w, 1,
                              Init::KaimingUniform, rng);
    for (std::size_t s = 0; s < n; ++s) {
      const std::string src = name + ".src" + std::to_string(s);
      ex.attention.push_back(
          NonLocal::create(store, src + ".nonlocal", merged, rng, config_.pixel_budget));
      ex.fuse.push_back(Conv::create(store, src + ".fuse", merged, w, 1, Init::KaimingUniform, rng));
    }
  }
  for (std::size_t s = 0; s < n; ++s) {
    const std::string name = "umb.src" + std::to_string(s) + ".decoder";
    SourceDecoder d;
    d.conv1 = Conv::create(store, name + ".conv1", w, w, 3, Init::KaimingUniform, rng);
    d.conv2 = Conv::create(store, name + ".conv2", w, 1, 3, Init::KaimingUniform, rng);
    decoder_.push_back(d);
  }
}

std::vector<ad::Var> Umb::lift(const nn::Bound& p, const std::vector<ad::Var>& labels) const {
  if (labels.size() != config_.sources) {
    throw DimensionError("UMB built for " + std::to_string(config_.sources) +
                         " sources, got " + std::to_string(labels.size()));
  }
  std::vector<ad::Var> out;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    const SourceLift& l = lift_[s];
    ad::Var h = ad::resample(ad::relu(l.conv1(p, scale_label(labels[s]))), ad::Resample::Down2);
    h = ad::resample(ad::relu(l.conv2(p, h)), ad::Resample::Down2);
    ad::Var r = l.res2(p, ad::relu(l.res1(p, h)));
    out.push_back(ad::add(h, r));
  }
  return out;
}

std::vector<ad::Var> Umb::exchange(const nn::Bound& p, const Exchange& ex,
                                   const std::vector<ad::Var>& maps, ad::Var features) const {
  const std::size_t n = maps.size();
  if (n != config_.sources) {
    throw DimensionError("UMB built for " + std::to_string(config_.sources) +
                         " sources, got " + std::to_string(n));
  }
  const ad::Var adapted = ex.adapter(p, features);
  std::vector<ad::Var> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<ad::Var> parts;
    for (std::size_t k = 0; k < n; ++k) parts.push_back(maps[(s + k) % n]);
    parts.push_back(adapted);
    const ad::Var merged = ad::concat_channels(parts);
    const ad::Var update = ex.fuse[s](p, ex.attention[s](p, merged));
    out.push_back(ad::add(maps[s], update));
  }
  return out;
}

std::vector<ad::Var> Umb::stage0(const nn::Bound& p, const std::vector<ad::Var>& labels,
                                 ad::Var f0) const {
  return exchange(p, stages_[0], lift(p, labels), f0);
}

std::vector<ad::Var> Umb::stage(const nn::Bound& p, std::size_t t,
                                const std::vector<ad::Var>& prev, ad::Var features) const {
  if (t < 1 || t > 2) throw Error("UMB refinement stage must be 1 or 2");
  return exchange(p, stages_[t], prev, features);
}

std::vector<ad::Var> Umb::decode(const nn::Bound& p, const std::vector<ad::Var>& maps) const {
  std::vector<ad::Var> out;
  for (std::size_t s = 0; s < maps.size(); ++s) {
    const SourceDecoder& d = decoder_.at(s);
    ad::Var h = ad::relu(d.conv1(p, ad::resample(maps[s], ad::Resample::Up2)));
    out.push_back(d.conv2(p, ad::resample(h, ad::Resample::Up2)));
  }
  return out;
}

std::vector<ad::Var> Umb::forward(const nn::Bound& p, const std::vector<ad::Var>& labels,
                                  const apb::FeaturePyramid& pyramid) const {
  auto u = stage0(p, labels, pyramid.f0);
  u = stage(p, 1, u, pyramid.f1);
  u = stage(p, 2, u, pyramid.f2);
  return decode(p, u);
}

}  // namespace dap::umb
