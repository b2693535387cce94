#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dap/attention_map.hpp"
#include "dap/tensor.hpp"

namespace dap::io {

// ATNM raster layout (all integers little-endian):
//   magic "ATNM" | u32 version (1) | u32 width | u32 height | u8 normalized
//   followed by width*height IEEE-754 binary64 values, row-major.
inline constexpr std::uint32_t kAtnmVersion = 1;
inline constexpr std::size_t kAtnmHeaderBytes = 17;

std::vector<std::uint8_t> encode_map(const AttentionMap& map);
AttentionMap decode_map(std::span<const std::uint8_t> bytes);

void save_map(const AttentionMap& map, const std::filesystem::path& path);
AttentionMap load_map(const std::filesystem::path& path);

/// Binary P5 greymap, min-max scaled to 0..255. A constant map is written
/// as mid-grey 128.
std::vector<std::uint8_t> encode_pgm(const AttentionMap& map);
void export_pgm(const AttentionMap& map, const std::filesystem::path& path);
/// Reads a P5 greymap with maxval 255 into values in [0, 1].
AttentionMap load_pgm(const std::filesystem::path& path);

/// Masks are stored as ATNM (thresholded at 0.5 on load) or PGM
/// (thresholded at 128), chosen by file extension.
void save_mask(const KnowledgeMask& mask, const std::filesystem::path& path);
KnowledgeMask load_mask(const std::filesystem::path& path);

/// Frames are binary P6 pixmaps; the tensor is [3, H, W] in [0, 1].
void save_frame(const Tensor& frame, const std::filesystem::path& path);
Tensor load_frame(const std::filesystem::path& path);

/// Rounds a [3, H, W] frame to the 8-bit grid used on disk.
Tensor quantize_frame(const Tensor& frame);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace dap::io
