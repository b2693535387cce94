#pragma once

#include <cstdint>
#include <vector>

#include "dap/attention_map.hpp"

namespace dap::io {

/// Settings for the synthetic driving-scene generator. Ground truth is a
/// mixture of isotropic Gaussian blobs; pseudo-label sources are corrupted
/// copies of it, alternating between two corruption families:
///   even sources: binomial blur mixed with a fixed centre-bias Gaussian;
///   odd sources:  blob-position jitter plus multiplicative noise.
/// Independently per sample and source, a source may fail outright: the
/// blur family then emits only the centre prior and the jitter family
/// places its blobs at random positions.
struct SynthConfig {
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t samples = 400;
  std::size_t sources = 2;

  std::size_t min_blobs = 1;
  std::size_t max_blobs = 3;
  double blob_sigma_min = 2.5;  // pixels at 64x64; scaled with resolution
  double blob_sigma_max = 5.0;

  // Blur + centre-bias family.
  std::size_t blur_passes = 1;  // applications of the 5x5 binomial kernel
  double center_bias_weight = 0.15;
  double center_sigma = 0.18;  // fraction of the shorter side

  // Jitter + noise family.
  double jitter = 3.0;                // std-dev of centre offsets, pixels
  double multiplicative_noise = 0.5;  // log-normal sigma per pixel

  // Per-sample, per-source probability of an outright failure.
  double failure_rate = 0.2;
  // Frame rendering.
  double frame_noise = 0.15;  // amplitude of the textured background

  // Knowledge masks: disks on a random subset of true blob centres.
  double mask_fraction = 0.5;
  double mask_radius = 1.2;  // in units of the blob sigma
  std::size_t text_distractors = 0;

  double train_fraction = 0.8;
  double val_fraction = 0.1;

  void validate() const;
};

/// Deterministic under `seed`; each sample draws from its own stream so the
/// output does not depend on generation order.
std::vector<SampleRecord> synth_generate(const SynthConfig& config, std::uint64_t seed);

/// Fixed 5x5 binomial smoothing with replicated borders.
AttentionMap binomial_blur(const AttentionMap& map);

/// Normalised isotropic Gaussian centred in the frame.
AttentionMap center_prior(std::size_t width, std::size_t height, double sigma_fraction);

}  // namespace dap::io
