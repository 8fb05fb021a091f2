#pragma once

// Monte Carlo model of a multi-domain ferroelectric gate stack and the FeFET
// channel conductance it produces under a reset/program/read pulse protocol.
//
// Units: lengths in micrometers (geometry) or nanometers (film thickness),
// fields in MV/cm, voltages in volts, times in seconds, conductance in uS.
//
// The numeric defaults below are calibration constants chosen to give a
// smooth S-shaped conductance-vs-program-voltage curve over 2..4 V for a
// 1 um x 1 um device. They are not measured values.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ferrobnn::device {

/// Domains per square micrometer; 1 um x 1 um gives ~5000 domains.
inline constexpr double kDefaultDomainDensity = 5000.0;

struct DeviceGeometry {
  double width_um = 1.0;
  double length_um = 1.0;
  int n_domains = 5000;

  /// n_domains = round(density * W * L), at least 1.
  static DeviceGeometry from_area(double width_um, double length_um,
                                  double density = kDefaultDomainDensity);
  double aspect() const { return width_um / length_um; }
  std::string label() const;
  void validate() const;
};

struct Domain {
  double activation_field = 0.0;  // MV/cm
  int polarization = -1;          // -1 or +1
  double history = 0.0;           // accumulated h_i(t), >= 0
};

/// Linear-region FET read model: the film polarization p shifts the
/// threshold voltage, Vth = vth0 - delta_vth_max * (p + 1) / 2, and
/// g = k_prime * (W/L) * max(0, V_read - Vth).
struct FetModel {
  double vth0 = 1.0;           // V, fully erased (p = -1)
  double delta_vth_max = 1.0;  // V, memory window
  double k_prime = 30.0;       // uS/V per square
};

struct SimParams {
  double beta = 2.0;            // shape parameter of the switching distribution
  double tau0 = 1e-9;           // s
  double nls_exponent = 2.0;
  double fe_thickness_nm = 8.0;
  double ea_mean = 10.0;        // MV/cm
  double ea_std = 1.2;          // MV/cm
  double dt = 1e-8;             // s, nominal step used to discretize pulses
  FetModel fet;

  void validate() const;
};

struct PulseWaveform {
  double amplitude = 0.0;  // V
  double width = 1e-6;     // s
  int n_steps = 1;

  double step() const { return width / n_steps; }
  void validate() const;
};

/// Builds a rectangular pulse discretized with the nominal step params.dt.
PulseWaveform make_waveform(double amplitude, double width, const SimParams& params);

struct PulseScheme {
  double reset_amplitude = -4.0;
  double reset_width = 1e-2;  // long enough that reset is complete in practice
  double program_start = 2.0;
  double program_stop = 4.0;
  double program_step = 0.02;
  double program_width = 1e-6;
  double read_voltage = 1.2;
  double drain_read = 0.05;
  double drain_program = 0.0;

  int n_levels() const;
  double program_voltage(int level) const;
  PulseWaveform reset(const SimParams& params) const;
  PulseWaveform program(double amplitude, const SimParams& params) const;
  void validate() const;
};

struct TracePoint {
  double v_prg = 0.0;
  double conductance_us = 0.0;

  friend bool operator==(const TracePoint&, const TracePoint&) = default;
};

struct ConductanceTrace {
  std::string device_label;
  int cycle_index = 0;
  double read_voltage = 0.0;
  std::vector<TracePoint> points;

  friend bool operator==(const ConductanceTrace&, const ConductanceTrace&) = default;
};

class DomainEnsemble {
 public:
  DomainEnsemble(DeviceGeometry geometry, std::vector<Domain> domains, std::uint64_t seed);

  const DeviceGeometry& geometry() const { return geometry_; }
  std::span<const Domain> domains() const { return domains_; }
  std::span<Domain> domains() { return domains_; }
  std::mt19937_64& rng() { return rng_; }

  double film_polarization() const;

  friend bool operator==(const DomainEnsemble& a, const DomainEnsemble& b);

 private:
  DeviceGeometry geometry_;
  std::vector<Domain> domains_;
  std::mt19937_64 rng_;
};

/// Activation fields ~ Normal(ea_mean, ea_std) truncated to > 0; every domain
/// starts fully erased (-1) with zero history.
DomainEnsemble init_ensemble(const DeviceGeometry& geometry, const SimParams& params,
                             std::uint64_t seed);

/// Nucleation-limited switching time constant tau0 * exp((Ea/E)^n).
/// Returns +inf for field <= 0.
double switching_time_constant(double field, double activation_field, const SimParams& params);

/// h += dt / tau(|field|); only the magnitude of the opposing field matters,
/// callers decide whether the domain opposes the field.
Domain update_history(Domain domain, double field, double dt, const SimParams& params);

/// 1 - exp(h_before^beta - h_after^beta). Throws if h_after < h_before.
double switching_probability(double h_before, double h_after, double beta);

/// Field across the film for a gate voltage (uniform-field approximation).
double film_field(double gate_voltage, const SimParams& params);

/// Applies a rectangular pulse. Domains opposing the field accumulate history
/// and may reverse; a reversal clears the history. Domains already aligned
/// with a nonzero field have their history cleared.
///
/// Per-step survival factors exp(h_k^beta - h_{k+1}^beta) telescope, so a
/// domain survives the whole pulse with probability exp(h_0^beta - h_n^beta).
/// One uniform is drawn per domain per pulse (also for aligned domains and
/// zero fields) and compared against that total; this is exact in
/// distribution for the end-of-pulse state and independent of n_steps.
void apply_pulse(DomainEnsemble& ensemble, const PulseWaveform& waveform, const SimParams& params);

double film_polarization(const DomainEnsemble& ensemble);

double read_conductance(double polarization, double read_voltage, const DeviceGeometry& geometry,
                        const SimParams& params);
double read_conductance(const DomainEnsemble& ensemble, double read_voltage,
                        const DeviceGeometry& geometry, const SimParams& params);

/// Reset -> program -> read at every program level, on an existing ensemble.
ConductanceTrace sweep(DomainEnsemble& ensemble, const SimParams& params, const PulseScheme& scheme,
                       int cycle_index = 0);

ConductanceTrace run_program_sweep(const DeviceGeometry& geometry, const SimParams& params,
                                   const PulseScheme& scheme, std::uint64_t seed);

/// One fresh device per seed, one sweep each.
std::vector<ConductanceTrace> monte_carlo_d2d(const DeviceGeometry& geometry,
                                              const SimParams& params, const PulseScheme& scheme,
                                              std::span<const std::uint64_t> seeds,
                                              unsigned threads = 1);

/// n_devices devices with seeds derived from base_seed.
std::vector<ConductanceTrace> monte_carlo_d2d(const DeviceGeometry& geometry,
                                              const SimParams& params, const PulseScheme& scheme,
                                              int n_devices, std::uint64_t base_seed,
                                              unsigned threads = 1);

/// One device, n_cycles consecutive sweeps.
std::vector<ConductanceTrace> monte_carlo_c2c(const DeviceGeometry& geometry,
                                              const SimParams& params, const PulseScheme& scheme,
                                              int n_cycles, std::uint64_t seed);

/// n_devices devices x n_cycles sweeps each (device-major order).
std::vector<ConductanceTrace> monte_carlo_campaign(const DeviceGeometry& geometry,
                                                   const SimParams& params,
                                                   const PulseScheme& scheme, int n_devices,
                                                   int n_cycles, std::uint64_t base_seed,
                                                   unsigned threads = 1);

}  // namespace ferrobnn::device
