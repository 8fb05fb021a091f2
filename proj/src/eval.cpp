#include "ferrobnn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <mutex>
#include <numeric>
#include <random>

#include "ferrobnn/common.hpp"

namespace ferrobnn::eval {

std::string_view framework_name(Framework f) {
  switch (f) {
    case Framework::BayesAware: return "bayes-aware";
    case Framework::BayesFixed: return "bayes-fixed";
    case Framework::DetNoisy: return "det-noisy";
    case Framework::DetClean: return "det-clean";
  }
  return "unknown";
}

Framework parse_framework(std::string_view name) {
  for (auto f : kAllFrameworks)
    if (framework_name(f) == name) return f;
  throw ConfigError(fmt::format(
      "unknown framework '{}' (expected bayes-aware, bayes-fixed, det-noisy or det-clean)", name));
}

void VariationProfile::validate() const {
  fit.validate();
  mapping.validate();
  if (fit.read_voltage != read_voltage)
    throw ConfigError(fmt::format("profile '{}': fit read voltage {} differs from profile {}", id,
                                  fit.read_voltage, read_voltage));
}

VariationProfile VariationProfile::from_fit(std::string id, const variation::VariationFit& fit,
                                            std::optional<mapping::MappingConfig> cfg) {
  VariationProfile p;
  p.id = std::move(id);
  p.device_label = fit.device_label;
  p.read_voltage = fit.read_voltage;
  p.fit = fit;
  p.mapping = cfg ? *cfg : mapping::from_fit(fit);
  p.validate();
  return p;
}

double perturb_weight(double w, double z, const mapping::MappingConfig& cfg,
                      const variation::VariationFit& fit, InjectionSpace space) {
  const int sign = w < 0.0 ? -1 : 1;
  if (space == InjectionSpace::Conductance) {
    const double g = mapping::weight_to_conductance(w, cfg);
    const double g_noisy = g + variation::eval_sigma(fit, g) * z;
    return mapping::conductance_to_weight(g_noisy, sign, cfg);
  }
  const double sigma = mapping::weight_sigma(w, cfg, fit);
  const double mag = std::clamp(std::abs(w) + sigma * z, cfg.w_min, cfg.w_max);
  return sign * mag;
}

bnn::PlainNetwork inject_variation(const bnn::PlainNetwork& net, const VariationProfile& profile,
                                   std::uint64_t seed, InjectionSpace space) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  bnn::PlainNetwork out = net;
  for (auto& layer : out.layers) {
    const auto cfg = mapping::scaled_to(profile.mapping, layer.max_abs());
    auto perturb = [&](double w) { return perturb_weight(w, normal(rng), cfg, profile.fit, space); };
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = perturb(layer.weight(i, j));
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = perturb(layer.bias(i));
  }
  return out;
}

double evaluate_accuracy(const bnn::PlainNetwork& net, const data::Dataset& dataset) {
  if (dataset.feature_dim() != net.spec.inputs())
    throw DataError(fmt::format("network expects {} features, dataset has {}", net.spec.inputs(),
                                dataset.feature_dim()));
  return bnn::accuracy(net.predict(dataset.features), dataset.labels);
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

NoisyAccuracy noisy_inference(const bnn::PlainNetwork& net, const VariationProfile& profile,
                              const data::Dataset& dataset, int runs, std::uint64_t seed,
                              unsigned threads, InjectionSpace space) {
  if (runs < 1) throw ConfigError("noisy_inference: runs must be >= 1");
  NoisyAccuracy out;
  out.runs.resize(static_cast<std::size_t>(runs));
  parallel_for(out.runs.size(), threads, [&](std::size_t r) {
    const auto noisy = inject_variation(net, profile, mix_seed(seed, r), space);
    out.runs[r] = evaluate_accuracy(noisy, dataset);
  });
  out.mean = mean_of(out.runs);
  if (runs > 1) out.std = sample_std(out.runs);
  return out;
}

// ---------------------------------------------------------------------------

double default_sigma_rel(const variation::VariationFit& fit) {
  const double mid = 0.5 * (fit.mu_min + fit.mu_max);
  if (!(mid > variation::kMuEpsilon)) throw ConfigError("det-noisy: fit range has no positive midpoint");
  return variation::average_sigma(fit) / mid;
}

bnn::PlainNetwork train_framework(Framework f, const data::DatasetHandle& data,
                                  const VariationProfile& profile, const CompareConfig& cfg,
                                  std::uint64_t train_seed, std::vector<bnn::EpochMetrics>* history) {
  bnn::TrainConfig tc = cfg.train;
  tc.seed = train_seed;
  switch (f) {
    case Framework::BayesAware: {
      auto prior = bnn::PriorModel::variation_aware({profile.fit}, profile.mapping, tc.sigma_conversion);
      auto r = bnn::train(cfg.spec, data, tc, prior);
      if (history) *history = r.history;
      return bnn::snapshot_mean_network(r.network);
    }
    case Framework::BayesFixed: {
      auto prior = bnn::PriorModel::fixed(variation::average_sigma(profile.fit), profile.mapping);
      auto r = bnn::train(cfg.spec, data, tc, prior);
      if (history) *history = r.history;
      return bnn::snapshot_mean_network(r.network);
    }
    case Framework::DetNoisy: {
      const double rel = cfg.det_noisy_sigma_rel > 0.0 ? cfg.det_noisy_sigma_rel
                                                       : default_sigma_rel(profile.fit);
      auto r = bnn::train_deterministic(cfg.spec, data, tc, rel);
      if (history) *history = r.history;
      return r.network;
    }
    case Framework::DetClean: {
      auto r = bnn::train_deterministic(cfg.spec, data, tc, 0.0);
      if (history) *history = r.history;
      return r.network;
    }
  }
  throw std::logic_error("unhandled framework");
}

std::optional<double> EvalReport::mean_noisy(Framework f, const std::string& profile) const {
  std::vector<double> xs;
  for (const auto& c : cells)
    if (c.framework == f && c.profile == profile) xs.push_back(c.noisy.mean);
  if (xs.empty()) return std::nullopt;
  return mean_of(xs);
}

std::optional<double> EvalReport::mean_clean(Framework f, const std::string& profile) const {
  std::vector<double> xs;
  for (const auto& c : cells)
    if (c.framework == f && c.profile == profile) xs.push_back(c.clean_accuracy);
  if (xs.empty()) return std::nullopt;
  return mean_of(xs);
}

namespace {

struct TrainJob {
  Framework framework;
  std::size_t profile;  // index used for training; ignored for det-clean
  std::uint64_t seed;
};

}  // namespace

EvalReport compare_frameworks(const data::DatasetHandle& data,
                              const std::vector<VariationProfile>& profiles,
                              const CompareConfig& cfg) {
  if (profiles.empty()) throw ConfigError("compare: no profiles");
  if (cfg.runs < 1) throw ConfigError("compare: runs must be >= 1");
  if (cfg.train_seeds.empty()) throw ConfigError("compare: no training seeds");
  for (const auto& p : profiles) {
    p.validate();
    const auto& m = profiles.front().mapping;
    if (p.mapping.g_min != m.g_min || p.mapping.g_max != m.g_max || p.mapping.w_min != m.w_min ||
        p.mapping.w_max != m.w_max)
      throw ConfigError(fmt::format("compare: profile '{}' uses a different mapping", p.id));
  }

  std::vector<TrainJob> jobs;
  for (auto seed : cfg.train_seeds)
    for (auto f : cfg.frameworks) {
      if (f == Framework::DetClean) {
        jobs.push_back({f, 0, seed});
      } else {
        for (std::size_t p = 0; p < profiles.size(); ++p) jobs.push_back({f, p, seed});
      }
    }

  std::vector<std::optional<bnn::PlainNetwork>> nets(jobs.size());
  std::vector<std::string> errors(jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
    try {
      nets[j] = train_framework(jobs[j].framework, data, profiles[jobs[j].profile], cfg, jobs[j].seed);
    } catch (const std::exception& e) {
      errors[j] = e.what();
    }
  });

  EvalReport report;
  report.runs = cfg.runs;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& job = jobs[j];
    std::vector<std::size_t> eval_profiles;
    if (job.framework == Framework::DetClean) {
      eval_profiles.resize(profiles.size());
      std::iota(eval_profiles.begin(), eval_profiles.end(), std::size_t{0});
    } else {
      eval_profiles.push_back(job.profile);
    }
    for (auto p : eval_profiles) {
      if (!nets[j]) {
        report.failures.push_back({job.framework, profiles[p].id, job.seed, errors[j]});
        continue;
      }
      CellSummary cell{job.framework, profiles[p].id, job.seed, 0.0, {}};
      cell.clean_accuracy = evaluate_accuracy(*nets[j], data.test);
      // Paired noise: every framework sees the same injection seeds.
      cell.noisy = noisy_inference(*nets[j], profiles[p], data.test, cfg.runs,
                                   mix_seed(cfg.eval_seed, job.seed), cfg.threads, cfg.space);
      for (int r = 0; r < cfg.runs; ++r)
        report.rows.push_back({job.framework, profiles[p].id, job.seed, r,
                               cell.noisy.runs[static_cast<std::size_t>(r)]});
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

int convergence_epoch(const std::vector<double>& accuracy, int window, double tolerance) {
  if (accuracy.empty()) return 0;
  if (window < 1) throw ConfigError("convergence: window must be >= 1");
  std::vector<double> ma(accuracy.size());
  for (std::size_t i = 0; i < accuracy.size(); ++i) {
    const std::size_t lo = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - static_cast<std::size_t>(window) : 0;
    double s = 0.0;
    for (std::size_t k = lo; k <= i; ++k) s += accuracy[k];
    ma[i] = s / static_cast<double>(i - lo + 1);
  }
  const double final_value = ma.back();
  for (std::size_t i = 0; i < ma.size(); ++i)
    if (std::abs(ma[i] - final_value) <= tolerance) return static_cast<int>(i) + 1;
  return static_cast<int>(ma.size());
}

std::vector<DynamicsCurve> training_dynamics(const data::DatasetHandle& data,
                                             const std::vector<VariationProfile>& profiles,
                                             const DynamicsConfig& cfg) {
  if (profiles.size() < 2) throw ConfigError("dynamics: need at least two profiles");
  if (cfg.runs < 1) throw ConfigError("dynamics: runs must be >= 1");
  for (const auto& p : profiles) p.validate();

  std::vector<DynamicsCurve> curves;
  for (auto seed : cfg.train_seeds)
    for (const auto& p : profiles) curves.push_back({p.id, seed, {}, 0});

  parallel_for(curves.size(), cfg.threads, [&](std::size_t c) {
    auto& curve = curves[c];
    const auto& profile = *std::find_if(profiles.begin(), profiles.end(),
                                        [&](const auto& p) { return p.id == curve.profile; });
    bnn::TrainConfig tc = cfg.train;
    tc.seed = curve.train_seed;
    bnn::TrainHooks hooks;
    hooks.on_epoch_network = [&](int epoch, const bnn::VariationalNetwork& net) {
      const auto snap = bnn::snapshot_mean_network(net);
      DynamicsPoint pt;
      pt.epoch = epoch;
      pt.test_acc = evaluate_accuracy(snap, data.test);
      pt.noisy_acc = noisy_inference(snap, profile, data.test, cfg.runs,
                                     mix_seed(cfg.eval_seed, static_cast<std::uint64_t>(epoch)), 1,
                                     cfg.space)
                         .mean;
      curve.points.push_back(pt);
    };
    bnn::train(cfg.spec, data, tc,
               bnn::PriorModel::variation_aware({profile.fit}, profile.mapping, tc.sigma_conversion), hooks);
    std::vector<double> acc;
    for (const auto& pt : curve.points) acc.push_back(pt.noisy_acc);
    curve.convergence_epoch = convergence_epoch(acc, cfg.window, cfg.tolerance);
  });
  return curves;
}

}  // namespace ferrobnn::eval
