#include "ferrobnn/variation_model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <map>
#include <set>

#include "ferrobnn/common.hpp"

namespace ferrobnn::variation {

using device::ConductanceTrace;

namespace {

void check_common_grid(std::span<const ConductanceTrace> traces) {
  if (traces.size() < 2) throw DataError("variation stats: need at least 2 traces");
  const auto& ref = traces.front();
  if (ref.points.empty()) throw DataError("variation stats: empty trace");
  for (const auto& t : traces) {
    if (t.points.size() != ref.points.size())
      throw DataError(fmt::format("variation stats: trace '{}' cycle {} has {} points, expected {}",
                                  t.device_label, t.cycle_index, t.points.size(),
                                  ref.points.size()));
    for (std::size_t i = 0; i < t.points.size(); ++i)
      if (t.points[i].v_prg != ref.points[i].v_prg)
        throw DataError(fmt::format("variation stats: v_prg grid mismatch at level {} ({} vs {})",
                                    i, t.points[i].v_prg, ref.points[i].v_prg));
    if (t.read_voltage != ref.read_voltage)
      throw DataError("variation stats: traces taken at different read voltages");
  }
}

VariationStats pooled(std::span<const ConductanceTrace> traces, std::string label) {
  check_common_grid(traces);
  VariationStats stats;
  stats.read_voltage = traces.front().read_voltage;
  stats.device_label = std::move(label);
  const std::size_t n_levels = traces.front().points.size();
  const double n = static_cast<double>(traces.size());
  for (std::size_t i = 0; i < n_levels; ++i) {
    double sum = 0.0;
    for (const auto& t : traces) sum += t.points[i].conductance_us;
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& t : traces) {
      const double d = t.points[i].conductance_us - mean;
      ss += d * d;
    }
    stats.levels.push_back({traces.front().points[i].v_prg, mean, std::sqrt(ss / (n - 1.0)),
                            static_cast<int>(traces.size())});
  }
  return stats;
}

}  // namespace

void VariationFit::validate() const {
  if (coefficients.empty()) throw ConfigError("variation fit: no coefficients");
  if (degree() > kMaxDegree) throw ConfigError("variation fit: degree above 9");
  if (!(mu_max >= mu_min)) throw ConfigError("variation fit: mu_max < mu_min");
  if (!(sigma_floor >= 0.0)) throw ConfigError("variation fit: negative sigma_floor");
  for (double c : coefficients)
    if (!std::isfinite(c)) throw ConfigError("variation fit: non-finite coefficient");
}

VariationFit reference_cubic_fit() {
  VariationFit fit;
  fit.coefficients = {0.0258, 0.788, -0.0214, 2.1e-4};
  fit.read_voltage = 1.2;
  fit.device_label = "W1xL1";
  fit.mu_min = 0.0;
  fit.mu_max = 35.0;
  return fit;
}

VariationFit scaled(VariationFit fit, double factor) {
  for (double& c : fit.coefficients) c *= factor;
  fit.residual_rms *= std::abs(factor);
  return fit;
}

VariationStats c2c_stats(std::span<const ConductanceTrace> traces) {
  if (traces.size() < 2) throw DataError("c2c_stats: need at least 2 cycles");
  for (const auto& t : traces)
    if (t.device_label != traces.front().device_label)
      throw DataError("c2c_stats: traces come from more than one device");
  return pooled(traces, traces.front().device_label);
}

VariationStats d2d_stats(std::span<const ConductanceTrace> traces) {
  if (traces.size() < 2) throw DataError("d2d_stats: need at least 2 devices");
  std::set<std::string> labels;
  for (const auto& t : traces)
    if (!labels.insert(t.device_label).second)
      throw DataError(fmt::format("d2d_stats: device '{}' appears more than once",
                                  t.device_label));
  return pooled(traces, traces.front().device_label + "+d2d");
}

VariationStats combined_stats(std::span<const ConductanceTrace> traces) {
  std::set<std::string> labels;
  for (const auto& t : traces) labels.insert(t.device_label);
  std::string label = labels.size() == 1 ? *labels.begin()
                                          : (traces.empty() ? "" : traces.front().device_label) +
                                                "+combined";
  return pooled(traces, std::move(label));
}

VariationFit fit_polynomial(const VariationStats& stats, int degree) {
  if (degree < 1 || degree > kMaxDegree)
    throw ConfigError(fmt::format("fit_polynomial: degree {} outside [1, {}]", degree, kMaxDegree));
  const auto& levels = stats.levels;
  const int n = static_cast<int>(levels.size());
  if (n <= degree)
    throw DataError(fmt::format("fit_polynomial: {} levels cannot determine degree {}", n, degree));

  double mu_min = levels.front().mu, mu_max = levels.front().mu;
  double scale = 0.0;
  for (const auto& l : levels) {
    mu_min = std::min(mu_min, l.mu);
    mu_max = std::max(mu_max, l.mu);
    scale = std::max(scale, std::abs(l.mu));
  }
  if (scale == 0.0) scale = 1.0;

  // Powers of mu / scale keep the Vandermonde columns O(1).
  Eigen::MatrixXd design(n, degree + 1);
  Eigen::VectorXd target(n);
  for (int r = 0; r < n; ++r) {
    const double t = levels[static_cast<std::size_t>(r)].mu / scale;
    double p = 1.0;
    for (int c = 0; c <= degree; ++c) {
      design(r, c) = p;
      p *= t;
    }
    target(r) = levels[static_cast<std::size_t>(r)].sigma;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-12);
  if (qr.rank() < degree + 1)
    throw NumericalError(fmt::format(
        "fit_polynomial: rank-deficient design (rank {} < {}); too few distinct mu values",
        qr.rank(), degree + 1));
  const Eigen::VectorXd scaled_coef = qr.solve(target);

  VariationFit fit;
  fit.read_voltage = stats.read_voltage;
  fit.device_label = stats.device_label;
  fit.mu_min = mu_min;
  fit.mu_max = mu_max;
  fit.coefficients.resize(static_cast<std::size_t>(degree + 1));
  double s = 1.0;
  for (int c = 0; c <= degree; ++c) {
    fit.coefficients[static_cast<std::size_t>(c)] = scaled_coef(c) / s;
    s *= scale;
  }
  const Eigen::VectorXd residual = design * scaled_coef - target;
  fit.residual_rms = std::sqrt(residual.squaredNorm() / n);
  return fit;
}

SigmaEval eval_sigma_checked(const VariationFit& fit, double mu) {
  SigmaEval out;
  double x = mu;
  if (x < fit.mu_min || x > fit.mu_max) {
    x = std::clamp(x, fit.mu_min, fit.mu_max);
    out.clamped = true;
  }
  double acc = 0.0;
  for (auto it = fit.coefficients.rbegin(); it != fit.coefficients.rend(); ++it) acc = acc * x + *it;
  out.sigma = std::max(acc, fit.sigma_floor);
  return out;
}

double eval_sigma(const VariationFit& fit, double mu) { return eval_sigma_checked(fit, mu).sigma; }

double relative_variation(const VariationFit& fit, double mu) {
  if (!(mu > kMuEpsilon))
    throw std::domain_error(fmt::format("relative_variation: mu = {} is not above {}", mu,
                                        kMuEpsilon));
  return eval_sigma(fit, mu) / mu;
}

double average_sigma(const VariationFit& fit, int grid_points) {
  if (grid_points < 2) throw std::invalid_argument("average_sigma: need at least 2 grid points");
  if (fit.mu_max == fit.mu_min) return eval_sigma(fit, fit.mu_min);
  const double h = (fit.mu_max - fit.mu_min) / (grid_points - 1);
  double sum = 0.5 * (eval_sigma(fit, fit.mu_min) + eval_sigma(fit, fit.mu_max));
  for (int i = 1; i < grid_points - 1; ++i) sum += eval_sigma(fit, fit.mu_min + i * h);
  return sum * h / (fit.mu_max - fit.mu_min);
}

}  // namespace ferrobnn::variation
