#pragma once

#include <cstddef>
#include <vector>

#include "dap/ad.hpp"
#include "dap/attention_map.hpp"

namespace dap::objective {

inline constexpr double kLogEps = 1e-12;

// ---------------------------------------------------------------------------
// Metrics on plain maps. All logs are natural; eps is added inside every log
// on both arguments.

/// sum_i p_i (log(p_i + eps) - log(q_i + eps)). Both maps must be
/// distributions of equal size.
double kld(const io::AttentionMap& p, const io::AttentionMap& q, double eps = kLogEps);
/// -sum_i p_i log(s_i + eps)
double cross_entropy_spatial(const io::AttentionMap& p, const io::AttentionMap& s,
                             double eps = kLogEps);
/// -sum_i p_i log(p_i + eps)
double entropy(const io::AttentionMap& p, double eps = kLogEps);
/// Pearson correlation with population moments. Throws NumericError when
/// either map is constant.
double cc(const io::AttentionMap& s, const io::AttentionMap& g);

// ---------------------------------------------------------------------------
// Uncertainty-weighted objective.

/// Per-source log-variance maps produced by the uncertainty branch for one
/// frame. Values are unconstrained reals.
struct UncertaintyMapSet {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::vector<double>> maps;
};

/// e is the spatial mean of a log-variance map, u = exp(e / 2) so that
/// e = log(u^2).
struct UncertaintyScalar {
  double u = 1.0;
  double e = 0.0;

  static UncertaintyScalar from_log_variance(double e);
};

std::vector<UncertaintyScalar> uncertainty_scalars(const UncertaintyMapSet& maps);

struct LossBreakdown {
  std::vector<double> kld;
  std::vector<double> e;
  std::vector<double> terms;  // kld * exp(-e) + e / 2
  double total = 0.0;
};

/// L = sum_n KLD(label_n, S) exp(-e_n) + e_n / 2
LossBreakdown uncertainty_loss(const io::AttentionMap& saliency,
                               const io::PseudoLabelSet& labels,
                               const std::vector<UncertaintyScalar>& scalars,
                               double eps = kLogEps);

/// For a fixed divergence k > 0 the loss k exp(-e) + e/2 is minimised at
/// e* = ln(2k), where it equals (1 + ln(2k)) / 2.
double optimal_log_variance(double k);
double optimal_loss(double k);

// ---------------------------------------------------------------------------
// Differentiable form used in training.

struct LossGraph {
  ad::Var total;         // scalar, mean over the batch of the per-frame loss
  ad::Var kld;           // [B, N, 1, 1]
  ad::Var log_variance;  // [B, N, 1, 1], spatial means of the maps
};

/// saliency: [B, 1, H, W] distribution per frame; labels: [B, N, H, W]
/// constant distributions; log_variance_maps: [B, N, H, W].
/// The label entropy term is a constant and is not recorded on the tape.
LossGraph uncertainty_loss(ad::Var saliency, const Tensor& labels, ad::Var log_variance_maps,
                           double eps = kLogEps);

}  // namespace dap::objective
