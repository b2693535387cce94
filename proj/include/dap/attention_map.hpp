#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dap/tensor.hpp"

namespace dap::io {

/// Single-channel non-negative raster, row-major. When `normalized` is set
/// the values sum to one.
struct AttentionMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;
  bool normalized = false;

  AttentionMap() = default;
  AttentionMap(std::size_t w, std::size_t h, std::vector<double> v,
               bool is_normalized = false);

  std::size_t size() const { return values.size(); }
  double sum() const;
  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }

  /// Throws unless values are finite, non-negative, sized width*height and,
  /// when normalized, sum to 1 within 1e-6.
  void validate() const;

  friend bool operator==(const AttentionMap&, const AttentionMap&) = default;
};

inline constexpr double kNormalizedTolerance = 1e-6;

/// Divides by the total mass. Throws DegenerateMapError on an all-zero map.
AttentionMap normalize_spatial(const AttentionMap& map);

/// [1, 1, H, W] tensor view of the map values.
Tensor to_tensor(const AttentionMap& map);
/// Reads plane (b, c) of a rank-4 tensor.
AttentionMap from_tensor(const Tensor& t, std::size_t b = 0, std::size_t c = 0,
                         bool normalized = false);

enum class ObjectClass {
  Pedestrian,
  Bicycle,
  Motorcycle,
  TrafficLight,
  StopSign,
  Text,
};

std::string_view class_name(ObjectClass c);
ObjectClass parse_class(std::string_view name);
/// Classes treated as driving-relevant knowledge by default (everything
/// except text regions).
const std::set<ObjectClass>& default_keep_classes();

/// Binary mask with the classes of the instances it was built from.
struct KnowledgeMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> values;
  std::vector<ObjectClass> class_tags;

  KnowledgeMask() = default;
  KnowledgeMask(std::size_t w, std::size_t h)
      : width(w), height(h), values(w * h, 0) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::size_t count() const;
  void validate() const;
};

/// N source-tagged pseudo-labels for one frame.
struct PseudoLabelSet {
  std::vector<std::string> source_names;
  std::vector<AttentionMap> maps;
  bool embedded = false;

  std::size_t size() const { return maps.size(); }
  void validate() const;
};

/// One frame with its pseudo-labels and optional knowledge masks. Ground
/// truth travels with the record only until it is handed to a Dataset.
struct SampleRecord {
  std::string id;
  std::string split = "train";
  Tensor frame;  // [3, H, W], values in [0, 1]
  PseudoLabelSet pseudo_labels;
  std::vector<KnowledgeMask> instance_masks;  // one class tag each
  std::optional<AttentionMap> ground_truth;

  std::size_t width() const { return frame.rank() == 3 ? frame.dim(2) : 0; }
  std::size_t height() const { return frame.rank() == 3 ? frame.dim(1) : 0; }
  void validate() const;
};

}  // namespace dap::io
