#pragma once

// Run configuration shared by all subcommands. Loaded from JSON with every
// key optional; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ferrobnn/bnn.hpp"
#include "ferrobnn/device_sim.hpp"
#include "ferrobnn/mapping.hpp"

namespace ferrobnn::config {

using nlohmann::json;

struct DeviceSection {
  device::DeviceGeometry geometry;
  device::SimParams sim;
  device::PulseScheme scheme;
  int devices = 200;
  int cycles = 1;
};

struct CharacterizeSection {
  std::string mode = "combined";  // combined, c2c, d2d
  int degree = 3;
  int min_samples = 2;
};

/// `fit` is "reference" (built-in cubic) or a fit record path.
struct ProfileSpec {
  std::string id;
  std::string fit = "reference";
  double scale = 1.0;
};

struct DatasetSection {
  std::string name = "data/mnist10k";
  int subset = 0;
  int test_subset = 0;
  std::uint64_t seed = 0;  // split / subset seed, independent of the run seed
};

struct EvalSection {
  int runs = 5;
  std::string space = "weight";  // weight, conductance
  int train_seeds = 5;
  int window = 3;
  double tolerance = 0.005;
};

struct RunConfig {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string output_dir;  // empty: $FERROBNN_OUT or ./out

  DeviceSection device;
  CharacterizeSection characterize;
  std::optional<mapping::MappingConfig> mapping;  // default: from the fit's range
  bnn::NetworkSpec network{{784, 128, 64, 10}, bnn::Activation::Relu};
  bnn::TrainConfig train;
  std::string framework = "bayes-aware";
  double det_noisy_sigma_rel = 0.0;  // <= 0: derived from the fit
  DatasetSection dataset;
  std::vector<ProfileSpec> profiles;
  EvalSection eval;

  void validate() const;
};

json to_json(const RunConfig& cfg);
/// Strict: throws ConfigError naming the first unknown key or bad value.
RunConfig from_json(const json& j);
RunConfig load(const std::filesystem::path& path);

/// SHA-256 of the resolved config with output_dir and threads removed (they
/// do not change any output).
std::string hash(const RunConfig& cfg);

/// Output root: explicit value, else $FERROBNN_OUT, else "out".
std::filesystem::path output_root(const std::string& explicit_dir);

}  // namespace ferrobnn::config
