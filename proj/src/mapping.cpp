#include "ferrobnn/mapping.hpp"

#include <algorithm>
#include <cmath>

#include "ferrobnn/common.hpp"

namespace ferrobnn::mapping {

void MappingConfig::validate() const {
  if (!(g_min >= 0.0) || !(g_max > g_min))
    throw ConfigError("mapping: require g_max > g_min >= 0");
  if (!(w_min >= 0.0) || !(w_max > w_min))
    throw ConfigError("mapping: require w_max > w_min >= 0");
}

MappingConfig from_fit(const variation::VariationFit& fit) {
  MappingConfig cfg;
  cfg.g_min = fit.mu_min;
  cfg.g_max = fit.mu_max;
  cfg.validate();
  return cfg;
}

MappingConfig scaled_to(const MappingConfig& cfg, double max_abs) {
  if (!(max_abs > 0.0)) return cfg;
  MappingConfig out = cfg;
  const double k = max_abs / cfg.w_max;
  out.w_min = cfg.w_min * k;
  out.w_max = cfg.w_max * k;
  return out;
}

Clamped weight_to_conductance_checked(double w, const MappingConfig& cfg) {
  double mag = std::abs(w);
  const bool clamped = mag < cfg.w_min || mag > cfg.w_max;
  mag = std::clamp(mag, cfg.w_min, cfg.w_max);
  return {cfg.slope() * (mag - cfg.w_max) + cfg.g_max, clamped};
}

double weight_to_conductance(double w, const MappingConfig& cfg) {
  return weight_to_conductance_checked(w, cfg).value;
}

Clamped conductance_to_weight_checked(double g, int sign, const MappingConfig& cfg) {
  const bool clamped = g < cfg.g_min || g > cfg.g_max;
  g = std::clamp(g, cfg.g_min, cfg.g_max);
  const double mag = (g - cfg.g_max) / cfg.slope() + cfg.w_max;
  return {sign < 0 ? -mag : mag, clamped};
}

double conductance_to_weight(double g, int sign, const MappingConfig& cfg) {
  return conductance_to_weight_checked(g, sign, cfg).value;
}

double weight_sigma(double w, const MappingConfig& cfg, const variation::VariationFit& fit,
                    SigmaConversion conversion) {
  const double g = weight_to_conductance(w, cfg);
  const double sigma_g = variation::eval_sigma(fit, g);
  switch (conversion) {
    case SigmaConversion::Jacobian:
      return sigma_g / cfg.slope();
    case SigmaConversion::Multiplicative:
      if (!(g > variation::kMuEpsilon)) return sigma_g / cfg.slope();
      return std::max(std::clamp(std::abs(w), cfg.w_min, cfg.w_max) * sigma_g / g, fit.sigma_floor / cfg.slope());
  }
  return sigma_g / cfg.slope();
}

}  // namespace ferrobnn::mapping
