#pragma once

// Conductance-variation statistics over trace collections and the polynomial
// sigma(mu) model used to build weight priors.

#include <span>
#include <string>
#include <vector>

#include "ferrobnn/device_sim.hpp"

namespace ferrobnn::variation {

struct VariationLevel {
  double v_prg = 0.0;
  double mu = 0.0;     // uS
  double sigma = 0.0;  // uS, sample std (n - 1)
  int n_samples = 0;
};

struct VariationStats {
  double read_voltage = 0.0;
  std::string device_label;
  std::vector<VariationLevel> levels;
};

inline constexpr double kDefaultSigmaFloor = 1e-4;  // uS
inline constexpr double kMuEpsilon = 1e-6;          // uS
inline constexpr int kMaxDegree = 9;
inline constexpr int kAverageGridPoints = 351;

/// sigma(mu) = sum_i C_i mu^i on [mu_min, mu_max], floored at sigma_floor.
struct VariationFit {
  std::vector<double> coefficients;  // C_0 .. C_n
  double read_voltage = 0.0;
  std::string device_label;
  double mu_min = 0.0;
  double mu_max = 0.0;
  double residual_rms = 0.0;
  double sigma_floor = kDefaultSigmaFloor;

  int degree() const { return static_cast<int>(coefficients.size()) - 1; }
  void validate() const;
};

/// Published cubic for the 1 um / 1 um device read at 1.2 V, on [0, 35] uS.
VariationFit reference_cubic_fit();

/// Multiplies every coefficient (and hence sigma) by factor.
VariationFit scaled(VariationFit fit, double factor);

/// Per-level mean and sample std across repeated cycles of one device.
VariationStats c2c_stats(std::span<const device::ConductanceTrace> traces);

/// Per-level mean and sample std across devices (one trace per device).
VariationStats d2d_stats(std::span<const device::ConductanceTrace> traces);

/// Pooled statistics over every (device, cycle) sample at each level. With a
/// single device this is identical to c2c_stats.
VariationStats combined_stats(std::span<const device::ConductanceTrace> traces);

/// Least-squares fit of sigma against mu over the levels.
VariationFit fit_polynomial(const VariationStats& stats, int degree);

struct SigmaEval {
  double sigma = 0.0;
  bool clamped = false;  // mu was outside [mu_min, mu_max]
};

SigmaEval eval_sigma_checked(const VariationFit& fit, double mu);
double eval_sigma(const VariationFit& fit, double mu);

/// sigma(mu) / mu; throws for mu <= kMuEpsilon.
double relative_variation(const VariationFit& fit, double mu);

/// Trapezoidal average of eval_sigma over a uniform grid spanning
/// [mu_min, mu_max] (grid_points nodes).
double average_sigma(const VariationFit& fit, int grid_points = kAverageGridPoints);

}  // namespace ferrobnn::variation
