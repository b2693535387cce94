#include "dap/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <iomanip>

#include "dap/error.hpp"
#include "dap/map_io.hpp"

namespace dap::io {

namespace {

struct Blob {
  double cx, cy, sigma, weight;
};

AttentionMap render_blobs(std::size_t w, std::size_t h, const std::vector<Blob>& blobs) {
  AttentionMap m(w, h, std::vector<double>(w * h, 0.0));
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double v = 0;
      for (const Blob& b : blobs) {
        const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
        v += b.weight * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
      }
      m.at(y, x) = v;
    }
  }
  return m;
}

KnowledgeMask render_disk(std::size_t w, std::size_t h, double cx, double cy,
                          double radius, ObjectClass cls) {
  KnowledgeMask mask(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      mask.values[y * w + x] = dx * dx + dy * dy <= radius * radius ? 1 : 0;
    }
  }
  mask.class_tags = {cls};
  return mask;
}

AttentionMap mix(const AttentionMap& a, const AttentionMap& b, double weight_b) {
  AttentionMap out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values[i] = (1.0 - weight_b) * a.values[i] + weight_b * b.values[i];
  }
  return out;
}

// Smooth background: a few random plane waves.
std::vector<double> texture(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> freq(0.5, 4.0), phase(0.0, 2 * std::numbers::pi),
      angle(0.0, std::numbers::pi);
  std::vector<double> t(w * h, 0.0);
  for (int k = 0; k < 3; ++k) {
    const double f = freq(rng), p = phase(rng), a = angle(rng);
    const double kx = f * std::cos(a) / static_cast<double>(w);
    const double ky = f * std::sin(a) / static_cast<double>(h);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        t[y * w + x] += std::sin(2 * std::numbers::pi * (kx * x + ky * y) + p) / 3.0;
      }
    }
  }
  return t;
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("synth config: " + what); };
  if (width < 16 || height < 16 || width % 16 || height % 16) {
    fail("size must be at least 16 and divisible by 16");
  }
  if (samples == 0) fail("samples must be positive");
  if (sources == 0) fail("sources must be positive");
  if (min_blobs == 0 || max_blobs < min_blobs) fail("blob count range invalid");
  if (!(blob_sigma_min > 0) || blob_sigma_max < blob_sigma_min) fail("blob sigma range invalid");
  if (center_bias_weight < 0 || center_bias_weight > 1) fail("center_bias_weight must be in [0, 1]");
  if (!(center_sigma > 0)) fail("center_sigma must be positive");
  if (jitter < 0) fail("jitter must be non-negative");
  if (multiplicative_noise < 0) fail("multiplicative_noise must be non-negative");
  if (failure_rate < 0 || failure_rate > 1) fail("failure_rate must be in [0, 1]");
  if (frame_noise < 0) fail("frame_noise must be non-negative");
  if (mask_fraction < 0 || mask_fraction > 1) fail("mask_fraction must be in [0, 1]");
  if (!(mask_radius > 0)) fail("mask_radius must be positive");
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1) {
    fail("split fractions invalid");
  }
}

AttentionMap binomial_blur(const AttentionMap& map) {
  static constexpr std::array<double, 5> k = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
  const std::size_t w = map.width, h = map.height;
  auto clampi = [](long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
  };
  std::vector<double> tmp(w * h, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      for (int d = -2; d <= 2; ++d) s += k[d + 2] * map.values[y * w + clampi(long(x) + d, w)];
      tmp[y * w + x] = s;
    }
  }
  AttentionMap out = map;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      for (int d = -2; d <= 2; ++d) s += k[d + 2] * tmp[clampi(long(y) + d, h) * w + x];
      out.values[y * w + x] = s;
    }
  }
  out.normalized = false;
  return out;
}

AttentionMap center_prior(std::size_t width, std::size_t height, double sigma_fraction) {
  const double sigma = sigma_fraction * static_cast<double>(std::min(width, height));
  const Blob b{width / 2.0, height / 2.0, sigma, 1.0};
  return normalize_spatial(render_blobs(width, height, {b}));
}

std::vector<SampleRecord> synth_generate(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t w = config.width, h = config.height;
  const double scale = static_cast<double>(std::min(w, h)) / 64.0;
  const AttentionMap center = center_prior(w, h, config.center_sigma);
  const std::size_t n_train =
      static_cast<std::size_t>(std::floor(config.train_fraction * config.samples));
  const std::size_t n_val =
      static_cast<std::size_t>(std::floor(config.val_fraction * config.samples));

  std::vector<SampleRecord> out;
  out.reserve(config.samples);
  for (std::size_t index = 0; index < config.samples; ++index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SampleRecord rec;
    std::ostringstream id;
    id << std::setw(6) << std::setfill('0') << index;
    rec.id = id.str();
    rec.split = index < n_train ? "train" : index < n_train + n_val ? "val" : "test";

    // Ground truth.
    std::uniform_int_distribution<std::size_t> count(config.min_blobs, config.max_blobs);
    std::vector<Blob> blobs(count(rng));
    const double margin = 6.0 * scale;
    for (Blob& b : blobs) {
      b.cx = margin + unit(rng) * (w - 2 * margin);
      b.cy = margin + unit(rng) * (h - 2 * margin);
      b.sigma = scale * (config.blob_sigma_min +
                         unit(rng) * (config.blob_sigma_max - config.blob_sigma_min));
      b.weight = 0.5 + 0.5 * unit(rng);
    }
    const AttentionMap gt = normalize_spatial(render_blobs(w, h, blobs));

    // Frame: ground truth rendered into three tinted channels over texture.
    const double peak = *std::max_element(gt.values.begin(), gt.values.end());
    rec.frame = Tensor(Shape{3, h, w});
    static constexpr std::array<double, 3> base = {0.15, 0.2, 0.3};
    static constexpr std::array<double, 3> gain = {0.75, 0.55, 0.35};
    for (std::size_t c = 0; c < 3; ++c) {
      const auto tex = texture(w, h, rng);
      for (std::size_t i = 0; i < w * h; ++i) {
        const double grain = unit(rng) - 0.5;
        rec.frame[c * w * h + i] = static_cast<real>(
            base[c] + gain[c] * gt.values[i] / peak +
            config.frame_noise * (0.5 * tex[i] + 0.5 * grain));
      }
    }
    rec.frame = quantize_frame(rec.frame);

    // Pseudo-label sources.
    for (std::size_t s = 0; s < config.sources; ++s) {
      const std::size_t cycle = s / 2;
      rec.pseudo_labels.source_names.push_back(std::string(s % 2 ? "jitter_noise" : "center_blur") +
                                               (cycle ? std::to_string(cycle + 1) : ""));
      AttentionMap label;
      const bool failed = unit(rng) < config.failure_rate;
      if (s % 2 == 0 && failed) {
        label = center;
      } else if (s % 2 == 0) {
        label = gt;
        for (std::size_t p = 0; p < config.blur_passes * (cycle + 1); ++p) {
          label = binomial_blur(label);
        }
        label = normalize_spatial(label);
        label = mix(label, center, config.center_bias_weight);
      } else {
        std::vector<Blob> moved = blobs;
        for (Blob& b : moved) {
          if (failed) {
            b.cx = margin + unit(rng) * (w - 2 * margin);
            b.cy = margin + unit(rng) * (h - 2 * margin);
          } else {
            b.cx += config.jitter * scale * gauss(rng);
            b.cy += config.jitter * scale * gauss(rng);
          }
        }
        label = render_blobs(w, h, moved);
        const double sig = config.multiplicative_noise;
        if (sig > 0) {
          for (double& v : label.values) v *= std::exp(sig * gauss(rng) - 0.5 * sig * sig);
        }
      }
      rec.pseudo_labels.maps.push_back(normalize_spatial(label));
    }

    // Knowledge masks on a subset of the true blobs.
    static constexpr std::array<ObjectClass, 5> relevant = {
        ObjectClass::Pedestrian, ObjectClass::Bicycle, ObjectClass::Motorcycle,
        ObjectClass::TrafficLight, ObjectClass::StopSign};
    std::uniform_int_distribution<std::size_t> pick(0, relevant.size() - 1);
    for (const Blob& b : blobs) {
      if (unit(rng) < config.mask_fraction) {
        rec.instance_masks.push_back(
            render_disk(w, h, b.cx, b.cy, config.mask_radius * b.sigma, relevant[pick(rng)]));
      }
    }
    for (std::size_t t = 0; t < config.text_distractors; ++t) {
      rec.instance_masks.push_back(render_disk(w, h, margin + unit(rng) * (w - 2 * margin),
                                               margin + unit(rng) * (h - 2 * margin),
                                               3.0 * scale, ObjectClass::Text));
    }

    rec.ground_truth = gt;
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace dap::io
