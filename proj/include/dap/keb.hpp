#pragma once

#include <set>
#include <string>
#include <vector>

#include "dap/attention_map.hpp"
#include "dap/tensor.hpp"

namespace dap::keb {

/// How driving knowledge enters the pseudo-labels.
///   None   - labels are used as given.
///   Single - each label is reweighted by (mask + alpha).
///   Concat - the mask is appended as a second input channel for the
///            uncertainty branch; labels used in the loss stay untouched.
enum class Strategy { None, Single, Concat };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

struct KebConfig {
  Strategy strategy = Strategy::Single;
  double alpha = 0.3;
  bool renormalize = true;
  std::set<io::ObjectClass> keep_classes = io::default_keep_classes();

  void validate() const;
};

/// Pixelwise maximum over the instances whose class is kept. Instances
/// without a class tag are always kept. No surviving instance gives an
/// all-zero mask of the given size.
io::KnowledgeMask merge_instance_masks(const std::vector<io::KnowledgeMask>& instances,
                                       const std::set<io::ObjectClass>& keep_classes,
                                       std::size_t width, std::size_t height);

/// label * (mask + alpha), rescaled to unit mass when cfg.renormalize.
io::AttentionMap embed_single(const io::AttentionMap& label, const io::KnowledgeMask& mask,
                              const KebConfig& cfg);

/// [1, 2, H, W]: channel 0 the label, channel 1 the mask.
Tensor embed_concat(const io::AttentionMap& label, const io::KnowledgeMask& mask);

/// Applies the configured strategy to a full label set. For Single the
/// returned maps replace the labels; for None and Concat they are returned
/// unchanged and the caller feeds the mask separately.
io::PseudoLabelSet embed_labels(const io::PseudoLabelSet& labels, const io::KnowledgeMask& mask,
                                const KebConfig& cfg);

}  // namespace dap::keb
