#include "dap/objective.hpp"

#include <cmath>

#include "dap/error.hpp"

namespace dap::objective {

namespace {

void require_distribution(const io::AttentionMap& m, const char* what) {
  const double s = m.sum();
  if (std::abs(s - 1.0) > io::kNormalizedTolerance) {
    throw DataError(std::string(what) + " is not normalized (sum " + std::to_string(s) + ")");
  }
}

void require_same_dims(const io::AttentionMap& a, const io::AttentionMap& b) {
  if (a.width != b.width || a.height != b.height || a.size() != b.size()) {
    throw DimensionError("maps differ in size: " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height));
  }
}

}  // namespace

double kld(const io::AttentionMap& p, const io::AttentionMap& q, double eps) {
  require_same_dims(p, q);
  require_distribution(p, "kld: first map");
  require_distribution(q, "kld: second map");
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    total += p.values[i] * (std::log(p.values[i] + eps) - std::log(q.values[i] + eps));
  }
  return total;
}

double cross_entropy_spatial(const io::AttentionMap& p, const io::AttentionMap& s, double eps) {
  require_same_dims(p, s);
  require_distribution(p, "cross_entropy: label");
  require_distribution(s, "cross_entropy: prediction");
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) total -= p.values[i] * std::log(s.values[i] + eps);
  return total;
}

double entropy(const io::AttentionMap& p, double eps) {
  require_distribution(p, "entropy");
  double total = 0;
  for (double v : p.values) total -= v * std::log(v + eps);
  return total;
}

double cc(const io::AttentionMap& s, const io::AttentionMap& g) {
  require_same_dims(s, g);
  const double n = static_cast<double>(s.size());
  double ms = 0, mg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    ms += s.values[i];
    mg += g.values[i];
  }
  ms /= n;
  mg /= n;
  double cov = 0, vs = 0, vg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double a = s.values[i] - ms, b = g.values[i] - mg;
    cov += a * b;
    vs += a * a;
    vg += b * b;
  }
  if (vs == 0 || vg == 0) {
    throw NumericError("correlation undefined for a constant map");
  }
  return cov / std::sqrt(vs * vg);
}

UncertaintyScalar UncertaintyScalar::from_log_variance(double e) {
  if (!std::isfinite(e)) throw NumericError("non-finite log variance");
  return UncertaintyScalar{std::exp(0.5 * e), e};
}

std::vector<UncertaintyScalar> uncertainty_scalars(const UncertaintyMapSet& maps) {
  std::vector<UncertaintyScalar> out;
  for (const auto& m : maps.maps) {
    if (m.size() != maps.width * maps.height || m.empty()) {
      throw DimensionError("uncertainty map size does not match its declared dims");
    }
    double total = 0;
    for (double v : m) {
      if (!std::isfinite(v)) throw NumericError("uncertainty map has non-finite values");
      total += v;
    }
    out.push_back(UncertaintyScalar::from_log_variance(total / static_cast<double>(m.size())));
  }
  return out;
}

LossBreakdown uncertainty_loss(const io::AttentionMap& saliency,
                               const io::PseudoLabelSet& labels,
                               const std::vector<UncertaintyScalar>& scalars, double eps) {
  if (labels.size() != scalars.size()) {
    throw DimensionError("uncertainty_loss: " + std::to_string(labels.size()) + " labels but " +
                         std::to_string(scalars.size()) + " uncertainty scalars");
  }
  LossBreakdown out;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const double k = kld(labels.maps[n], saliency, eps);
    const double e = scalars[n].e;
    const double term = k * std::exp(-e) + 0.5 * e;
    out.kld.push_back(k);
    out.e.push_back(e);
    out.terms.push_back(term);
    out.total += term;
  }
  return out;
}

double optimal_log_variance(double k) {
  if (!(k > 0)) throw NumericError("optimal log variance needs a positive divergence");
  return std::log(2 * k);
}

double optimal_loss(double k) { return 0.5 * (1.0 + optimal_log_variance(k)); }

LossGraph uncertainty_loss(ad::Var saliency, const Tensor& labels, ad::Var log_variance_maps,
                           double eps) {
  const Tensor& s = saliency.value();
  require_rank4(s, "uncertainty_loss saliency");
  require_rank4(labels, "uncertainty_loss labels");
  if (s.dim(1) != 1 || labels.dim(0) != s.dim(0) || labels.dim(2) != s.dim(2) ||
      labels.dim(3) != s.dim(3)) {
    throw DimensionError("uncertainty_loss: saliency " + to_string(s.shape()) +
                         " incompatible with labels " + to_string(labels.shape()));
  }
  if (log_variance_maps.shape() != labels.shape()) {
    throw DimensionError("uncertainty_loss: " + std::to_string(labels.dim(1)) +
                         " labels but uncertainty maps of shape " +
                         to_string(log_variance_maps.shape()));
  }
  const std::size_t batch = s.dim(0), sources = labels.dim(1);
  ad::Tape& tape = saliency.tape();

  Tensor label_log = labels;
  for (real& v : label_log.data()) v = std::log(v + static_cast<real>(eps));
  const ad::Var y = tape.constant(labels);
  const ad::Var log_y = tape.constant(std::move(label_log));
  const ad::Var log_s =
      ad::broadcast_channels(ad::log(ad::add_scalar(saliency, static_cast<real>(eps))), sources);

  LossGraph g;
  g.kld = ad::sum_spatial(ad::mul(y, ad::sub(log_y, log_s)));
  g.log_variance = ad::mean_spatial(log_variance_maps);
  const ad::Var weighted = ad::mul(g.kld, ad::exp(ad::scalar_mul(g.log_variance, real(-1))));
  const ad::Var terms = ad::add(weighted, ad::scalar_mul(g.log_variance, real(0.5)));
  g.total = ad::scalar_mul(ad::sum_all(terms), real(1) / static_cast<real>(batch));
  return g;
}

}  // namespace dap::objective
