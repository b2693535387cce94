#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dap/config.hpp"
#include "dap/model.hpp"
#include "dap/optim.hpp"

namespace dap::train {

// DAPC layout (little-endian):
//   magic "DAPC" | u32 version | u64 sources | u64 label_channels
//   | u32 len + config text | u64 step | u64 epoch
//   | u32 count | count x (u32 len + name | u32 rank | rank x u64 | f64 values)
//   | u64 adam step | count x m values | count x v values
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  std::size_t sources = 0;
  std::size_t label_channels = 1;
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::vector<std::string> names;
  std::vector<Tensor> params;
  AdamState adam;
};

model::ModelConfig model_config(const TrainConfig& c, std::size_t sources,
                                std::size_t label_channels);

/// Snapshot of a model and its optimiser.
Checkpoint make_checkpoint(const TrainConfig& config, const model::Model& model,
                           const AdamState& adam, std::size_t step, std::size_t epoch);

/// Rebuilds the model and copies the stored tensors into it by name.
model::Model restore_model(const Checkpoint& ckpt);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dap::train
