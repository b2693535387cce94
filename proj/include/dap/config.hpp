#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dap/keb.hpp"

namespace dap::train {

/// Training hyper-parameters. The text form is one `key = value` per line
/// with '#' comments; keys are the field names below, with the knowledge
/// embedding settings prefixed `keb_`:
///
///   lr, betas (two comma-separated values), weight_decay, epochs,
///   batch_size, warmup_steps, seed, sources (comma-separated names, empty
///   for all), resolution (HxW), base_channels, umb_width, pixel_budget,
///   keb_strategy (none|single|concat), keb_alpha, keb_renormalize,
///   keb_keep_classes (comma-separated class names)
struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  /// Unset means 5% of the total step count.
  std::optional<std::size_t> warmup_steps;
  std::uint64_t seed = 0;
  keb::KebConfig keb;
  std::vector<std::string> sources;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t base_channels = 8;
  std::size_t umb_width = 8;
  std::size_t pixel_budget = 4096;

  void validate() const;
  std::size_t resolve_warmup(std::size_t total_steps) const;

  std::string to_text() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

}  // namespace dap::train
