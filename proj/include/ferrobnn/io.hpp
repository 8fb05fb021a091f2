#pragma once

// File formats: trace / stats / metrics / report CSVs, fit records,
// checkpoints. Every writer goes through write_atomic, and CSV writers put a
// `# config_sha256=<hex>` line first when given a hash. Readers skip lines
// starting with '#'.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ferrobnn/bnn.hpp"
#include "ferrobnn/device_sim.hpp"
#include "ferrobnn/eval.hpp"
#include "ferrobnn/mapping.hpp"
#include "ferrobnn/variation_model.hpp"

namespace ferrobnn::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(const std::string& bytes);

/// Writes to a sibling temp file, then renames over `path`.
void write_atomic(const fs::path& path, const std::string& content);
std::string read_file(const fs::path& path);

/// Shortest decimal string that parses back to exactly x.
std::string format_double(double x);

// Traces: device_label,cycle,read_voltage,v_prg,conductance_us
std::string traces_to_csv(const std::vector<device::ConductanceTrace>& traces,
                          const std::string& config_hash = {});
std::vector<device::ConductanceTrace> traces_from_csv(const std::string& text,
                                                      const std::string& source = "<csv>");
void write_traces(const fs::path& path, const std::vector<device::ConductanceTrace>& traces,
                  const std::string& config_hash = {});
std::vector<device::ConductanceTrace> read_traces(const fs::path& path);
/// Every *.csv under dir (sorted by name), concatenated.
std::vector<device::ConductanceTrace> read_trace_dir(const fs::path& dir);

// Stats: v_prg,mu_us,sigma_us,n after `# read_voltage=` and
// `# device_label=` lines.
std::string stats_to_csv(const variation::VariationStats& stats, const std::string& config_hash = {});
variation::VariationStats stats_from_csv(const std::string& text, const std::string& source = "<csv>");

json fit_to_json(const variation::VariationFit& fit, const std::string& config_hash = {});
variation::VariationFit fit_from_json(const json& j);
void write_fit(const fs::path& path, const variation::VariationFit& fit,
               const std::string& config_hash = {});
variation::VariationFit read_fit(const fs::path& path);

json mapping_to_json(const mapping::MappingConfig& cfg);
mapping::MappingConfig mapping_from_json(const json& j);

// Metrics: epoch,likelihood,kl,total,train_acc,test_acc
std::string metrics_to_csv(const std::vector<bnn::EpochMetrics>& history,
                           const std::string& config_hash = {});

// ---------------------------------------------------------------------------
// Checkpoints: "FBNNCKPT", u32 version, u64 metadata length, metadata JSON,
// then little-endian doubles for every array named in the metadata, in order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct AdamState {
  long steps = 0;
  std::vector<std::vector<double>> m, v;
};

struct Checkpoint {
  std::string framework;  // bayes-aware, bayes-fixed, det-noisy, det-clean
  bnn::NetworkSpec spec;
  std::optional<bnn::VariationalNetwork> variational;  // Bayesian frameworks
  std::optional<bnn::PlainNetwork> plain;              // deterministic frameworks
  std::optional<AdamState> optimizer;
  std::optional<mapping::MappingConfig> mapping;       // mapping used by the prior
  std::string prior_reference;                         // fit file or profile id
  std::uint64_t train_seed = 0;
  int epoch = 0;
  double clean_test_accuracy = 0.0;
  std::string config_hash;

  /// Posterior means or the plain weights.
  bnn::PlainNetwork deployable() const;
};

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const fs::path& path);

// ---------------------------------------------------------------------------
// Reports

/// framework,profile,run,accuracy,train_seed
std::string report_to_csv(const eval::EvalReport& report, const std::string& config_hash = {});
/// framework,profile,train_seed,clean_accuracy,mean[,std]; std only when runs > 1.
std::string summary_to_csv(const eval::EvalReport& report, const std::string& config_hash = {});
json report_to_json(const eval::EvalReport& report, const std::string& config_hash = {});

/// profile,train_seed,epoch,test_acc,noisy_acc
std::string dynamics_to_csv(const std::vector<eval::DynamicsCurve>& curves,
                            const std::string& config_hash = {});
json dynamics_to_json(const std::vector<eval::DynamicsCurve>& curves,
                      const std::string& config_hash = {});

}  // namespace ferrobnn::io
