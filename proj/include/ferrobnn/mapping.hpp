#pragma once

// Affine weight-magnitude <-> conductance map and the pullback of
// conductance-domain spread into weight units. The sign of a weight is not
// encoded in the conductance; callers carry it separately.

#include "ferrobnn/variation_model.hpp"

namespace ferrobnn::mapping {

struct MappingConfig {
  double g_min = 0.0;  // uS
  double g_max = 1.0;  // uS
  double w_min = 0.0;
  double w_max = 1.0;

  /// dg/d|w|
  double slope() const { return (g_max - g_min) / (w_max - w_min); }
  void validate() const;
};

/// Conductance window taken from the fit's range of validity, w in [0, 1].
MappingConfig from_fit(const variation::VariationFit& fit);

/// Same conductance window with the weight range stretched to [0, max_abs]
/// (per-layer max-abs normalization). max_abs <= 0 returns cfg unchanged.
MappingConfig scaled_to(const MappingConfig& cfg, double max_abs);

enum class SigmaConversion {
  Jacobian,        // sigma_w = sigma_g / slope
  Multiplicative,  // sigma_w = |w| * sigma_g / g
};

struct Clamped {
  double value = 0.0;
  bool clamped = false;
};

Clamped weight_to_conductance_checked(double w, const MappingConfig& cfg);
double weight_to_conductance(double w, const MappingConfig& cfg);

Clamped conductance_to_weight_checked(double g, int sign, const MappingConfig& cfg);
double conductance_to_weight(double g, int sign, const MappingConfig& cfg);

double weight_sigma(double w, const MappingConfig& cfg, const variation::VariationFit& fit,
                    SigmaConversion conversion = SigmaConversion::Jacobian);

}  // namespace ferrobnn::mapping
