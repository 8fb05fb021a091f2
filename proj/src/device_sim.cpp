#include "ferrobnn/device_sim.hpp"

#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ferrobnn/common.hpp"

namespace ferrobnn::device {

namespace {

std::string device_name(const DeviceGeometry& g, int index) {
  return fmt::format("{}_d{:03d}", g.label(), index);
}

}  // namespace

DeviceGeometry DeviceGeometry::from_area(double width_um, double length_um, double density) {
  DeviceGeometry g;
  g.width_um = width_um;
  g.length_um = length_um;
  g.n_domains = std::max(1, static_cast<int>(std::lround(density * width_um * length_um)));
  g.validate();
  return g;
}

std::string DeviceGeometry::label() const {
  return fmt::format("W{:g}xL{:g}", width_um, length_um);
}

void DeviceGeometry::validate() const {
  if (!(width_um > 0.0) || !(length_um > 0.0))
    throw ConfigError("device geometry: width and length must be positive");
  if (n_domains < 1) throw ConfigError("device geometry: n_domains must be >= 1");
}

void SimParams::validate() const {
  if (!(beta > 0.0)) throw ConfigError("sim params: beta must be > 0");
  if (!(tau0 > 0.0)) throw ConfigError("sim params: tau0 must be > 0");
  if (!(nls_exponent > 0.0)) throw ConfigError("sim params: nls_exponent must be > 0");
  if (!(fe_thickness_nm > 0.0)) throw ConfigError("sim params: fe_thickness_nm must be > 0");
  if (!(ea_mean > 0.0)) throw ConfigError("sim params: ea_mean must be > 0");
  if (!(ea_std >= 0.0)) throw ConfigError("sim params: ea_std must be >= 0");
  if (!(dt > 0.0)) throw ConfigError("sim params: dt must be > 0");
  if (!(fet.k_prime >= 0.0) || !(fet.delta_vth_max >= 0.0))
    throw ConfigError("sim params: FET constants must be non-negative");
}

void PulseWaveform::validate() const {
  if (!(width > 0.0)) throw ConfigError("pulse: width must be > 0");
  if (n_steps < 1) throw ConfigError("pulse: n_steps must be >= 1");
}

PulseWaveform make_waveform(double amplitude, double width, const SimParams& params) {
  PulseWaveform w;
  w.amplitude = amplitude;
  w.width = width;
  w.n_steps = std::max(1, static_cast<int>(std::ceil(width / params.dt - 1e-9)));
  return w;
}

int PulseScheme::n_levels() const {
  return static_cast<int>(std::floor((program_stop - program_start) / program_step + 1e-9)) + 1;
}

double PulseScheme::program_voltage(int level) const {
  return program_start + level * program_step;
}

PulseWaveform PulseScheme::reset(const SimParams& params) const {
  return make_waveform(reset_amplitude, reset_width, params);
}

PulseWaveform PulseScheme::program(double amplitude, const SimParams& params) const {
  return make_waveform(amplitude, program_width, params);
}

void PulseScheme::validate() const {
  if (!(program_stop >= program_start))
    throw ConfigError("pulse scheme: program_stop must be >= program_start");
  if (!(program_step > 0.0)) throw ConfigError("pulse scheme: program_step must be > 0");
  if (!(reset_amplitude < 0.0)) throw ConfigError("pulse scheme: reset amplitude must be < 0");
  if (!(reset_width > 0.0) || !(program_width > 0.0))
    throw ConfigError("pulse scheme: pulse widths must be > 0");
  if (!(read_voltage > 0.0)) throw ConfigError("pulse scheme: read_voltage must be > 0");
}

DomainEnsemble::DomainEnsemble(DeviceGeometry geometry, std::vector<Domain> domains,
                               std::uint64_t seed)
    : geometry_(geometry), domains_(std::move(domains)), rng_(seed) {
  if (static_cast<int>(domains_.size()) != geometry_.n_domains)
    throw std::invalid_argument("domain count does not match geometry");
}

double DomainEnsemble::film_polarization() const {
  double sum = 0.0;
  for (const auto& d : domains_) sum += d.polarization;
  return sum / static_cast<double>(domains_.size());
}

bool operator==(const DomainEnsemble& a, const DomainEnsemble& b) {
  if (a.domains_.size() != b.domains_.size() || a.rng_ != b.rng_) return false;
  for (std::size_t i = 0; i < a.domains_.size(); ++i) {
    const auto& x = a.domains_[i];
    const auto& y = b.domains_[i];
    if (x.activation_field != y.activation_field || x.polarization != y.polarization ||
        x.history != y.history)
      return false;
  }
  return true;
}

DomainEnsemble init_ensemble(const DeviceGeometry& geometry, const SimParams& params,
                             std::uint64_t seed) {
  geometry.validate();
  params.validate();
  std::mt19937_64 init_rng(mix_seed(seed, 0));
  std::normal_distribution<double> ea(params.ea_mean, params.ea_std);
  std::vector<Domain> domains(static_cast<std::size_t>(geometry.n_domains));
  for (auto& d : domains) {
    double v = params.ea_std > 0.0 ? ea(init_rng) : params.ea_mean;
    while (!(v > 0.0)) v = ea(init_rng);
    d.activation_field = v;
  }
  return DomainEnsemble(geometry, std::move(domains), mix_seed(seed, 1));
}

double switching_time_constant(double field, double activation_field, const SimParams& params) {
  if (!(field > 0.0)) return std::numeric_limits<double>::infinity();
  return params.tau0 * std::exp(std::pow(activation_field / field, params.nls_exponent));
}

Domain update_history(Domain domain, double field, double dt, const SimParams& params) {
  const double tau = switching_time_constant(field, domain.activation_field, params);
  if (std::isfinite(tau)) domain.history += dt / tau;
  return domain;
}

double switching_probability(double h_before, double h_after, double beta) {
  if (h_after < h_before) throw std::invalid_argument("switching_probability: h_after < h_before");
  if (h_before < 0.0) throw std::invalid_argument("switching_probability: negative history");
  return -std::expm1(std::pow(h_before, beta) - std::pow(h_after, beta));
}

double film_field(double gate_voltage, const SimParams& params) {
  // 1 V/nm = 10 MV/cm
  return 10.0 * gate_voltage / params.fe_thickness_nm;
}

void apply_pulse(DomainEnsemble& ensemble, const PulseWaveform& waveform, const SimParams& params) {
  waveform.validate();
  const double field = film_field(waveform.amplitude, params);
  const int favoured = field > 0.0 ? +1 : -1;
  const double magnitude = std::abs(field);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto& rng = ensemble.rng();

  for (auto& d : ensemble.domains()) {
    const double u = uniform(rng);
    if (field == 0.0) continue;
    if (d.polarization == favoured) {
      d.history = 0.0;
      continue;
    }
    const Domain after = update_history(d, magnitude, waveform.width, params);
    if (after.history == d.history) continue;
    if (u < switching_probability(d.history, after.history, params.beta)) {
      d.polarization = favoured;
      d.history = 0.0;
    } else {
      d.history = after.history;
    }
  }
}

double film_polarization(const DomainEnsemble& ensemble) { return ensemble.film_polarization(); }

double read_conductance(double polarization, double read_voltage, const DeviceGeometry& geometry,
                        const SimParams& params) {
  if (!(read_voltage > 0.0)) throw std::invalid_argument("read_conductance: read_voltage <= 0");
  const auto& fet = params.fet;
  const double vth = fet.vth0 - fet.delta_vth_max * (polarization + 1.0) / 2.0;
  return fet.k_prime * geometry.aspect() * std::max(0.0, read_voltage - vth);
}

double read_conductance(const DomainEnsemble& ensemble, double read_voltage,
                        const DeviceGeometry& geometry, const SimParams& params) {
  return read_conductance(ensemble.film_polarization(), read_voltage, geometry, params);
}

ConductanceTrace sweep(DomainEnsemble& ensemble, const SimParams& params, const PulseScheme& scheme,
                       int cycle_index) {
  scheme.validate();
  ConductanceTrace trace;
  trace.device_label = ensemble.geometry().label();
  trace.cycle_index = cycle_index;
  trace.read_voltage = scheme.read_voltage;
  const int levels = scheme.n_levels();
  trace.points.reserve(static_cast<std::size_t>(levels));
  const PulseWaveform reset = scheme.reset(params);
  for (int i = 0; i < levels; ++i) {
    const double v = scheme.program_voltage(i);
    apply_pulse(ensemble, reset, params);
    apply_pulse(ensemble, scheme.program(v, params), params);
    trace.points.push_back(
        {v, read_conductance(ensemble, scheme.read_voltage, ensemble.geometry(), params)});
  }
  return trace;
}

ConductanceTrace run_program_sweep(const DeviceGeometry& geometry, const SimParams& params,
                                   const PulseScheme& scheme, std::uint64_t seed) {
  auto ensemble = init_ensemble(geometry, params, seed);
  return sweep(ensemble, params, scheme, 0);
}

std::vector<ConductanceTrace> monte_carlo_d2d(const DeviceGeometry& geometry,
                                              const SimParams& params, const PulseScheme& scheme,
                                              std::span<const std::uint64_t> seeds,
                                              unsigned threads) {
  if (seeds.size() < 2) throw ConfigError("monte_carlo_d2d: need at least 2 devices");
  std::vector<ConductanceTrace> traces(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t i) {
    traces[i] = run_program_sweep(geometry, params, scheme, seeds[i]);
    traces[i].device_label = device_name(geometry, static_cast<int>(i));
  });
  return traces;
}

std::vector<ConductanceTrace> monte_carlo_d2d(const DeviceGeometry& geometry,
                                              const SimParams& params, const PulseScheme& scheme,
                                              int n_devices, std::uint64_t base_seed,
                                              unsigned threads) {
  if (n_devices < 2) throw ConfigError("monte_carlo_d2d: need at least 2 devices");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n_devices));
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = mix_seed(base_seed, i);
  return monte_carlo_d2d(geometry, params, scheme, seeds, threads);
}

std::vector<ConductanceTrace> monte_carlo_c2c(const DeviceGeometry& geometry,
                                              const SimParams& params, const PulseScheme& scheme,
                                              int n_cycles, std::uint64_t seed) {
  if (n_cycles < 2) throw ConfigError("monte_carlo_c2c: need at least 2 cycles");
  auto ensemble = init_ensemble(geometry, params, seed);
  std::vector<ConductanceTrace> traces;
  traces.reserve(static_cast<std::size_t>(n_cycles));
  for (int c = 0; c < n_cycles; ++c) traces.push_back(sweep(ensemble, params, scheme, c));
  return traces;
}

std::vector<ConductanceTrace> monte_carlo_campaign(const DeviceGeometry& geometry,
                                                   const SimParams& params,
                                                   const PulseScheme& scheme, int n_devices,
                                                   int n_cycles, std::uint64_t base_seed,
                                                   unsigned threads) {
  if (n_devices < 1 || n_cycles < 1)
    throw ConfigError("monte_carlo_campaign: need at least 1 device and 1 cycle");
  std::vector<std::vector<ConductanceTrace>> per_device(static_cast<std::size_t>(n_devices));
  parallel_for(per_device.size(), threads, [&](std::size_t i) {
    auto ensemble = init_ensemble(geometry, params, mix_seed(base_seed, i));
    auto& out = per_device[i];
    for (int c = 0; c < n_cycles; ++c) {
      out.push_back(sweep(ensemble, params, scheme, c));
      out.back().device_label = device_name(geometry, static_cast<int>(i));
    }
  });
  std::vector<ConductanceTrace> traces;
  for (auto& dev : per_device)
    for (auto& t : dev) traces.push_back(std::move(t));
  return traces;
}

}  // namespace ferrobnn::device
