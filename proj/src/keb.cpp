#include "dap/keb.hpp"

#include <algorithm>
#include <cmath>

#include "dap/error.hpp"

namespace dap::keb {

namespace {

void require_same_dims(const io::AttentionMap& label, const io::KnowledgeMask& mask) {
  if (label.width != mask.width || label.height != mask.height) {
    throw DimensionError("label is " + std::to_string(label.width) + "x" +
                         std::to_string(label.height) + " but mask is " +
                         std::to_string(mask.width) + "x" + std::to_string(mask.height));
  }
}

}  // namespace

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::None: return "none";
    case Strategy::Single: return "single";
    case Strategy::Concat: return "concat";
  }
  return "none";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "none") return Strategy::None;
  if (name == "single") return Strategy::Single;
  if (name == "concat") return Strategy::Concat;
  throw ConfigError("unknown knowledge-embedding strategy '" + std::string(name) + "'");
}

void KebConfig::validate() const {
  if (!std::isfinite(alpha) || !(alpha > 0)) {
    throw ConfigError("keb alpha must be finite and positive");
  }
}

io::KnowledgeMask merge_instance_masks(const std::vector<io::KnowledgeMask>& instances,
                                       const std::set<io::ObjectClass>& keep_classes,
                                       std::size_t width, std::size_t height) {
  io::KnowledgeMask merged(width, height);
  for (const auto& inst : instances) {
    if (inst.width != width || inst.height != height) {
      throw DimensionError("instance mask size differs from frame size");
    }
    const bool keep =
        inst.class_tags.empty() ||
        std::any_of(inst.class_tags.begin(), inst.class_tags.end(),
                    [&](io::ObjectClass c) { return keep_classes.count(c) > 0; });
    if (!keep) continue;
    for (std::size_t i = 0; i < merged.values.size(); ++i) {
      merged.values[i] = std::max(merged.values[i], inst.values[i]);
    }
    merged.class_tags.insert(merged.class_tags.end(), inst.class_tags.begin(),
                             inst.class_tags.end());
  }
  return merged;
}

io::AttentionMap embed_single(const io::AttentionMap& label, const io::KnowledgeMask& mask,
                              const KebConfig& cfg) {
  cfg.validate();
  require_same_dims(label, mask);
  io::AttentionMap out = label;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values[i] = label.values[i] * (mask.values[i] + cfg.alpha);
  }
  out.normalized = false;
  return cfg.renormalize ? io::normalize_spatial(out) : out;
}

Tensor embed_concat(const io::AttentionMap& label, const io::KnowledgeMask& mask) {
  require_same_dims(label, mask);
  const std::size_t n = label.size();
  Tensor out(Shape{1, 2, label.height, label.width});
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<real>(label.values[i]);
    out[n + i] = static_cast<real>(mask.values[i]);
  }
  return out;
}

io::PseudoLabelSet embed_labels(const io::PseudoLabelSet& labels, const io::KnowledgeMask& mask,
                                const KebConfig& cfg) {
  io::PseudoLabelSet out = labels;
  if (cfg.strategy == Strategy::Single) {
    for (auto& m : out.maps) m = embed_single(m, mask, cfg);
  }
  out.embedded = cfg.strategy != Strategy::None;
  return out;
}

}  // namespace dap::keb
