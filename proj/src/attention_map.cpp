#include "dap/attention_map.hpp"

#include <cmath>
#include <numeric>

#include "dap/error.hpp"

namespace dap::io {

AttentionMap::AttentionMap(std::size_t w, std::size_t h, std::vector<double> v,
                           bool is_normalized)
    : width(w), height(h), values(std::move(v)), normalized(is_normalized) {
  if (values.size() != width * height) {
    throw DimensionError("attention map of " + std::to_string(width) + "x" +
                         std::to_string(height) + " given " +
                         std::to_string(values.size()) + " values");
  }
}

double AttentionMap::sum() const {
  return std::accumulate(values.begin(), values.end(), 0.0);
}

void AttentionMap::validate() const {
  if (values.size() != width * height) {
    throw DimensionError("attention map value count does not match dims");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("attention map has non-finite value");
    if (v < 0) throw DataError("attention map has negative value");
  }
  if (normalized && std::abs(sum() - 1.0) > kNormalizedTolerance) {
    throw DataError("attention map flagged normalized but sums to " +
                    std::to_string(sum()));
  }
}

AttentionMap normalize_spatial(const AttentionMap& map) {
  const double total = map.sum();
  if (!(total > 0)) {
    throw DegenerateMapError("cannot normalize a map with no positive mass");
  }
  AttentionMap out = map;
  for (double& v : out.values) v /= total;
  out.normalized = true;
  return out;
}

Tensor to_tensor(const AttentionMap& map) {
  Tensor t(Shape{1, 1, map.height, map.width});
  for (std::size_t i = 0; i < map.size(); ++i) t[i] = static_cast<real>(map.values[i]);
  return t;
}

AttentionMap from_tensor(const Tensor& t, std::size_t b, std::size_t c,
                         bool normalized) {
  require_rank4(t, "from_tensor");
  const std::size_t h = t.dim(2), w = t.dim(3);
  std::vector<double> v(h * w);
  const std::size_t off = (b * t.dim(1) + c) * h * w;
  for (std::size_t i = 0; i < h * w; ++i) v[i] = static_cast<double>(t[off + i]);
  return AttentionMap(w, h, std::move(v), normalized);
}

namespace {
constexpr std::pair<ObjectClass, std::string_view> kClassNames[] = {
    {ObjectClass::Pedestrian, "pedestrian"},
    {ObjectClass::Bicycle, "bicycle"},
    {ObjectClass::Motorcycle, "motorcycle"},
    {ObjectClass::TrafficLight, "traffic_light"},
    {ObjectClass::StopSign, "stop_sign"},
    {ObjectClass::Text, "text"},
};
}  // namespace

std::string_view class_name(ObjectClass c) {
  for (const auto& [cls, name] : kClassNames) {
    if (cls == c) return name;
  }
  return "unknown";
}

ObjectClass parse_class(std::string_view name) {
  for (const auto& [cls, n] : kClassNames) {
    if (n == name) return cls;
  }
  throw DataError("unknown object class '" + std::string(name) + "'");
}

const std::set<ObjectClass>& default_keep_classes() {
  static const std::set<ObjectClass> keep = {
      ObjectClass::Pedestrian, ObjectClass::Bicycle, ObjectClass::Motorcycle,
      ObjectClass::TrafficLight, ObjectClass::StopSign};
  return keep;
}

std::size_t KnowledgeMask::count() const {
  std::size_t n = 0;
  for (auto v : values) n += v;
  return n;
}

void KnowledgeMask::validate() const {
  if (values.size() != width * height) {
    throw DimensionError("knowledge mask value count does not match dims");
  }
  for (auto v : values) {
    if (v > 1) throw DataError("knowledge mask value outside {0,1}");
  }
}

void PseudoLabelSet::validate() const {
  if (maps.empty()) throw DataError("pseudo-label set is empty");
  if (source_names.size() != maps.size()) {
    throw DataError("pseudo-label set has " + std::to_string(maps.size()) +
                    " maps but " + std::to_string(source_names.size()) +
                    " source names");
  }
  for (const auto& m : maps) {
    if (m.width != maps.front().width || m.height != maps.front().height) {
      throw DimensionError("pseudo-labels differ in size");
    }
    m.validate();
  }
}

void SampleRecord::validate() const {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw DimensionError("frame must be [3, H, W], got " + to_string(frame.shape()));
  }
  pseudo_labels.validate();
  const auto w = width(), h = height();
  if (pseudo_labels.maps.front().width != w || pseudo_labels.maps.front().height != h) {
    throw DimensionError("pseudo-labels do not match frame size in sample " + id);
  }
  for (const auto& m : instance_masks) {
    m.validate();
    if (m.width != w || m.height != h) {
      throw DimensionError("mask does not match frame size in sample " + id);
    }
  }
  if (ground_truth) {
    ground_truth->validate();
    if (ground_truth->width != w || ground_truth->height != h) {
      throw DimensionError("ground truth does not match frame size in sample " + id);
    }
  }
}

}  // namespace dap::io
