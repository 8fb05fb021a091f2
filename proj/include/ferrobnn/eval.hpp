#pragma once

// Noise-injected inference and the framework comparison / training-dynamics
// experiments built on it.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ferrobnn/bnn.hpp"
#include "ferrobnn/dataset.hpp"
#include "ferrobnn/mapping.hpp"
#include "ferrobnn/variation_model.hpp"

namespace ferrobnn::eval {

enum class Framework { BayesAware, BayesFixed, DetNoisy, DetClean };

std::string_view framework_name(Framework f);
Framework parse_framework(std::string_view name);
inline constexpr Framework kAllFrameworks[] = {Framework::BayesAware, Framework::BayesFixed,
                                              Framework::DetNoisy, Framework::DetClean};

/// Where inference noise is added. Both give the same distribution under the
/// affine map; Conductance goes through g explicitly.
enum class InjectionSpace { Weight, Conductance };

struct VariationProfile {
  std::string id;
  std::string device_label;
  double read_voltage = 0.0;
  variation::VariationFit fit;
  mapping::MappingConfig mapping;

  /// Throws ConfigError unless fit.read_voltage == read_voltage.
  void validate() const;
  static VariationProfile from_fit(std::string id, const variation::VariationFit& fit,
                                   std::optional<mapping::MappingConfig> mapping = {});
};

/// sign(w) * clamp(|w| + eps, w_min, w_max), eps ~ N(0, weight_sigma(w)).
/// `z` is the standard-normal draw. Zero weights count as positive.
double perturb_weight(double w, double z, const mapping::MappingConfig& cfg,
                      const variation::VariationFit& fit, InjectionSpace space);

/// Perturbs every weight and bias, each layer under its own max-abs scaled
/// mapping. Deterministic in seed.
bnn::PlainNetwork inject_variation(const bnn::PlainNetwork& net, const VariationProfile& profile,
                                   std::uint64_t seed,
                                   InjectionSpace space = InjectionSpace::Weight);

double evaluate_accuracy(const bnn::PlainNetwork& net, const data::Dataset& dataset);

struct NoisyAccuracy {
  double mean = 0.0;
  std::optional<double> std;  // absent for a single run
  std::vector<double> runs;
};

/// Run r uses inject_variation seed mix_seed(seed, r).
NoisyAccuracy noisy_inference(const bnn::PlainNetwork& net, const VariationProfile& profile,
                              const data::Dataset& dataset, int runs, std::uint64_t seed,
                              unsigned threads = 1, InjectionSpace space = InjectionSpace::Weight);

double sample_std(const std::vector<double>& xs);
double mean_of(const std::vector<double>& xs);

// ---------------------------------------------------------------------------
// Framework comparison

struct CompareConfig {
  bnn::NetworkSpec spec;
  bnn::TrainConfig train;
  std::vector<std::uint64_t> train_seeds{0};
  std::vector<Framework> frameworks{std::begin(kAllFrameworks), std::end(kAllFrameworks)};
  int runs = 5;
  std::uint64_t eval_seed = 0;
  /// Multiplicative training noise for det-noisy; <= 0 selects
  /// average_sigma(fit) / midpoint of the fit's conductance range.
  double det_noisy_sigma_rel = 0.0;
  InjectionSpace space = InjectionSpace::Weight;
  unsigned threads = 1;
};

/// Relative training noise used by det-noisy when none is configured.
double default_sigma_rel(const variation::VariationFit& fit);

struct ReportRow {
  Framework framework;
  std::string profile;
  std::uint64_t train_seed = 0;
  int run = 0;
  double accuracy = 0.0;
};

struct CellSummary {
  Framework framework;
  std::string profile;
  std::uint64_t train_seed = 0;
  double clean_accuracy = 0.0;
  NoisyAccuracy noisy;
};

struct CellFailure {
  Framework framework;
  std::string profile;
  std::uint64_t train_seed = 0;
  std::string message;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::vector<CellSummary> cells;
  std::vector<CellFailure> failures;
  int runs = 0;

  /// Mean over training seeds of the per-seed noisy means.
  std::optional<double> mean_noisy(Framework f, const std::string& profile) const;
  std::optional<double> mean_clean(Framework f, const std::string& profile) const;
};

/// Trains every framework for every training seed and evaluates it under
/// each profile. Profile-dependent frameworks (bayes-aware, bayes-fixed,
/// det-noisy) are trained once per profile; det-clean once per seed. A
/// training failure is recorded for its cell and the rest continue.
EvalReport compare_frameworks(const data::DatasetHandle& data,
                              const std::vector<VariationProfile>& profiles,
                              const CompareConfig& cfg);

/// Trains one framework and returns its deployable mean network.
bnn::PlainNetwork train_framework(Framework f, const data::DatasetHandle& data,
                                  const VariationProfile& profile, const CompareConfig& cfg,
                                  std::uint64_t train_seed,
                                  std::vector<bnn::EpochMetrics>* history = nullptr);

// ---------------------------------------------------------------------------
// Training dynamics

struct DynamicsConfig {
  bnn::NetworkSpec spec;
  bnn::TrainConfig train;
  std::vector<std::uint64_t> train_seeds{0};
  int runs = 5;  // noisy evaluations per epoch
  std::uint64_t eval_seed = 0;
  int window = 3;            // moving-average window
  double tolerance = 0.005;  // fraction of accuracy (0.5 points)
  InjectionSpace space = InjectionSpace::Weight;
  unsigned threads = 1;
};

struct DynamicsPoint {
  int epoch = 0;
  double test_acc = 0.0;   // clean snapshot
  double noisy_acc = 0.0;  // mean over runs
};

struct DynamicsCurve {
  std::string profile;
  std::uint64_t train_seed = 0;
  std::vector<DynamicsPoint> points;
  int convergence_epoch = 0;
};

/// First epoch whose trailing moving average is within tolerance of the
/// final moving average. Epochs before a full window use the partial mean.
int convergence_epoch(const std::vector<double>& accuracy, int window, double tolerance);

/// One bayes-aware training run per (profile, seed); the tracked accuracy is
/// noisy deployment accuracy under that profile, evaluated every epoch.
std::vector<DynamicsCurve> training_dynamics(const data::DatasetHandle& data,
                                             const std::vector<VariationProfile>& profiles,
                                             const DynamicsConfig& cfg);

}  // namespace ferrobnn::eval
