#include "ferrobnn/commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fmt/format.h>
#include <functional>
#include <memory>
#include <optional>

#include "ferrobnn/bnn.hpp"
#include "ferrobnn/common.hpp"
#include "ferrobnn/config.hpp"
#include "ferrobnn/dataset.hpp"
#include "ferrobnn/device_sim.hpp"
#include "ferrobnn/eval.hpp"
#include "ferrobnn/io.hpp"
#include "ferrobnn/variation_model.hpp"

namespace ferrobnn::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonOptions {
  std::string config_path;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string out;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  o.seed_opt = app->add_option("--seed", o.seed, "Master seed");
  o.threads_opt = app->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  app->add_option("-o,--out", o.out, "Output directory (default: $FERROBNN_OUT or ./out)");
}

config::RunConfig base_config(const CommonOptions& o) {
  config::RunConfig cfg = o.config_path.empty() ? config::RunConfig{} : config::load(o.config_path);
  if (o.seed_opt->count()) cfg.seed = o.seed;
  if (o.threads_opt->count()) cfg.threads = o.threads;
  if (!o.out.empty()) cfg.output_dir = o.out;
  return cfg;
}

// Applies an option value to a config field only when the flag was given.
template <typename T>
struct Override {
  CLI::Option* opt = nullptr;
  T value{};
  void apply(T& target) const {
    if (opt && opt->count()) target = value;
  }
};

template <typename T>
Override<T>* add_override(CLI::App* app, std::vector<std::shared_ptr<void>>& keep, const std::string& name,
                          const std::string& help) {
  auto ov = std::make_shared<Override<T>>();
  ov->opt = app->add_option(name, ov->value, help);
  keep.push_back(ov);
  return ov.get();
}

std::string file_digest(const fs::path& p) { return io::sha256_hex(io::read_file(p)); }

// Everything that determines a command's outputs: the resolved config plus
// the identity of its input files.
struct Run {
  Run(std::string name, config::RunConfig resolved) : command(std::move(name)), cfg(std::move(resolved)) {}

  std::string command;
  config::RunConfig cfg;
  std::vector<int> hidden;  // --hidden: input/output widths come from the dataset
  json inputs = json::object();
  fs::path out;
  std::string hash;

  void finalize() {
    cfg.validate();
    out = config::output_root(cfg.output_dir);
    // Output location and thread count never change file contents, so they
    // are left out of both the hash and the resolved copy.
    json j = config::to_json(cfg);
    j.erase("output_dir");
    j.erase("threads");
    hash = io::sha256_hex(json{{"command", command}, {"config", j}, {"inputs", inputs}}.dump());
    json resolved = {{"command", command}, {"config", j}, {"inputs", inputs}, {"config_sha256", hash}};
    io::write_atomic(out / "resolved_config.json", resolved.dump(2) + "\n");
  }
};

config::ProfileSpec parse_profile_arg(const std::string& arg, std::size_t index) {
  config::ProfileSpec p;
  std::string rest = arg;
  if (auto eq = rest.find('='); eq != std::string::npos) {
    p.id = rest.substr(0, eq);
    rest = rest.substr(eq + 1);
  }
  if (auto star = rest.rfind('*'); star != std::string::npos) {
    try {
      std::size_t used = 0;
      p.scale = std::stod(rest.substr(star + 1), &used);
      if (used != rest.size() - star - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("profile '{}': bad scale factor", arg));
    }
    rest = rest.substr(0, star);
  }
  if (rest.empty()) throw ConfigError(fmt::format("profile '{}': missing fit source", arg));
  p.fit = rest;
  if (p.id.empty()) p.id = fmt::format("p{}", index);
  return p;
}

variation::VariationFit load_profile_fit(const config::ProfileSpec& spec) {
  auto fit = spec.fit == "reference" ? variation::reference_cubic_fit() : io::read_fit(spec.fit);
  return spec.scale == 1.0 ? fit : variation::scaled(fit, spec.scale);
}

void record_profile_inputs(Run& run) {
  for (const auto& p : run.cfg.profiles)
    if (p.fit != "reference") run.inputs["files"][p.fit] = file_digest(p.fit);
}

std::vector<eval::VariationProfile> build_profiles(const config::RunConfig& cfg, bool shared_mapping) {
  if (cfg.profiles.empty()) throw ConfigError("no variation profiles given (use --profile or config 'profiles')");
  std::vector<eval::VariationProfile> out;
  std::optional<mapping::MappingConfig> m = cfg.mapping;
  for (const auto& spec : cfg.profiles) {
    auto fit = load_profile_fit(spec);
    out.push_back(eval::VariationProfile::from_fit(spec.id, fit, m));
    if (shared_mapping && !m) m = out.back().mapping;
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t k = i + 1; k < out.size(); ++k)
      if (out[i].id == out[k].id) throw ConfigError(fmt::format("duplicate profile id '{}'", out[i].id));
  return out;
}

data::DatasetHandle load_data(Run& run) {
  const auto& cfg = run.cfg;
  auto d = data::load_dataset(cfg.dataset.name,
                              {cfg.dataset.subset, cfg.dataset.test_subset, cfg.dataset.seed});
  fmt::print(stderr, "dataset {}: {} train / {} test, {} features, {} classes\n", d.name,
             d.train.size(), d.test.size(), d.feature_dim(), d.classes());
  if (!run.hidden.empty()) {
    run.cfg.network.widths = {d.feature_dim()};
    run.cfg.network.widths.insert(run.cfg.network.widths.end(), run.hidden.begin(), run.hidden.end());
    run.cfg.network.widths.push_back(d.classes());
  }
  return d;
}

eval::InjectionSpace injection_space(const config::RunConfig& cfg) {
  return cfg.eval.space == "conductance" ? eval::InjectionSpace::Conductance : eval::InjectionSpace::Weight;
}

std::vector<std::uint64_t> train_seeds(const config::RunConfig& cfg) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < cfg.eval.train_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
  return seeds;
}

// ---------------------------------------------------------------------------

int cmd_simulate(Run& run) {
  const auto& d = run.cfg.device;
  run.finalize();
  const auto traces = device::monte_carlo_campaign(d.geometry, d.sim, d.scheme, d.devices, d.cycles,
                                                   run.cfg.seed, run.cfg.threads);
  json files = json::array();
  for (const auto& t : traces) {
    const auto name = fmt::format("{}_c{:03d}.csv", t.device_label, t.cycle_index);
    io::write_traces(run.out / "traces" / name, {t}, run.hash);
    files.push_back("traces/" + name);
  }
  json manifest = {{"config_sha256", run.hash},
                   {"device", d.geometry.label()},
                   {"n_domains", d.geometry.n_domains},
                   {"devices", d.devices},
                   {"cycles", d.cycles},
                   {"levels", d.scheme.n_levels()},
                   {"read_voltage", d.scheme.read_voltage},
                   {"files", files}};
  io::write_atomic(run.out / "manifest.json", manifest.dump(2) + "\n");
  fmt::print("wrote {} traces ({} levels each) to {}\n", traces.size(), d.scheme.n_levels(),
             (run.out / "traces").string());
  return kExitOk;
}

int cmd_characterize(Run& run, const std::string& traces_dir) {
  const fs::path dir = traces_dir.empty() ? config::output_root(run.cfg.output_dir) / "traces" : fs::path(traces_dir);
  const auto traces = io::read_trace_dir(dir);
  {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) run.inputs["files"][f.filename().string()] = file_digest(f);
  }
  run.finalize();
  const auto& ch = run.cfg.characterize;
  const auto stats = ch.mode == "c2c"   ? variation::c2c_stats(traces)
                     : ch.mode == "d2d" ? variation::d2d_stats(traces)
                                        : variation::combined_stats(traces);
  for (const auto& l : stats.levels)
    if (l.n_samples < ch.min_samples)
      throw DataError(fmt::format("level V_PRG={} V has {} samples, need at least {}", l.v_prg,
                                  l.n_samples, ch.min_samples));
  const auto fit = variation::fit_polynomial(stats, ch.degree);
  io::write_atomic(run.out / "stats.csv", io::stats_to_csv(stats, run.hash));
  io::write_fit(run.out / "fit.json", fit, run.hash);
  fmt::print("{} traces, {} levels, degree {} fit, residual RMS {:.6g} uS\n", traces.size(),
             stats.levels.size(), fit.degree(), fit.residual_rms);
  return kExitOk;
}

int cmd_fit(Run& run, const std::string& stats_path, bool reference, double scale) {
  if (reference == !stats_path.empty()) throw ConfigError("fit: give exactly one of --stats or --reference");
  if (!reference) run.inputs["files"][stats_path] = file_digest(stats_path);
  run.inputs["reference"] = reference;
  run.inputs["scale"] = scale;
  run.finalize();
  variation::VariationFit fit;
  if (reference) {
    fit = variation::reference_cubic_fit();
  } else {
    fit = variation::fit_polynomial(io::stats_from_csv(io::read_file(stats_path), stats_path),
                                    run.cfg.characterize.degree);
  }
  if (scale != 1.0) fit = variation::scaled(fit, scale);
  io::write_fit(run.out / "fit.json", fit, run.hash);
  fmt::print("degree {} fit on [{}, {}] uS, residual RMS {:.6g} uS\n", fit.degree(), fit.mu_min,
             fit.mu_max, fit.residual_rms);
  return kExitOk;
}

int cmd_train(Run& run) {
  const auto framework = eval::parse_framework(run.cfg.framework);
  const bool needs_fit = framework == eval::Framework::BayesAware || framework == eval::Framework::BayesFixed ||
                         (framework == eval::Framework::DetNoisy && run.cfg.det_noisy_sigma_rel <= 0.0);
  if (needs_fit && run.cfg.profiles.empty())
    throw ConfigError(fmt::format("framework {} needs a variation fit (--fit)", run.cfg.framework));
  record_profile_inputs(run);
  const auto data = load_data(run);
  run.finalize();
  std::optional<eval::VariationProfile> profile;
  if (!run.cfg.profiles.empty()) profile = build_profiles(run.cfg, true).front();

  std::vector<bnn::EpochMetrics> history;
  auto on_epoch = [&](const bnn::EpochMetrics& m) {
    history.push_back(m);
    io::write_atomic(run.out / "metrics.csv", io::metrics_to_csv(history, run.hash));
    fmt::print(stderr, "epoch {:3d}  loss {:.4f}  kl {:.4f}  train {:.4f}  test {:.4f}\n", m.epoch,
               m.total, m.kl, m.train_acc, m.test_acc);
  };

  io::Checkpoint ckpt;
  ckpt.framework = run.cfg.framework;
  ckpt.spec = run.cfg.network;
  ckpt.train_seed = run.cfg.seed;
  ckpt.epoch = run.cfg.train.epochs;
  ckpt.config_hash = run.hash;
  bnn::TrainConfig tc = run.cfg.train;
  tc.seed = run.cfg.seed;
  // Partial metrics stay on disk if training diverges.
  io::write_atomic(run.out / "metrics.csv", io::metrics_to_csv(history, run.hash));

  if (framework == eval::Framework::BayesAware || framework == eval::Framework::BayesFixed) {
    auto prior = framework == eval::Framework::BayesAware
                     ? bnn::PriorModel::variation_aware({profile->fit}, profile->mapping, tc.sigma_conversion)
                     : bnn::PriorModel::fixed(variation::average_sigma(profile->fit), profile->mapping);
    bnn::TrainHooks hooks;
    hooks.on_epoch = on_epoch;
    auto result = bnn::train(run.cfg.network, data, tc, prior, hooks);
    ckpt.variational = result.network;
    ckpt.optimizer = io::AdamState{result.optimizer.steps(), result.optimizer.first_moment(),
                                   result.optimizer.second_moment()};
    ckpt.mapping = profile->mapping;
    ckpt.prior_reference = run.cfg.profiles.front().fit;
  } else {
    double rel = 0.0;
    if (framework == eval::Framework::DetNoisy)
      rel = run.cfg.det_noisy_sigma_rel > 0.0 ? run.cfg.det_noisy_sigma_rel : eval::default_sigma_rel(profile->fit);
    auto result = bnn::train_deterministic(run.cfg.network, data, tc, rel, on_epoch);
    ckpt.plain = result.network;
    if (profile) {
      ckpt.mapping = profile->mapping;
      ckpt.prior_reference = run.cfg.profiles.front().fit;
    }
  }
  ckpt.clean_test_accuracy = eval::evaluate_accuracy(ckpt.deployable(), data.test);
  io::write_checkpoint(run.out / "checkpoint.fbnn", ckpt);
  fmt::print("{}: clean test accuracy {:.4f}\n", run.cfg.framework, ckpt.clean_test_accuracy);
  return kExitOk;
}

bool same_mapping(const mapping::MappingConfig& a, const mapping::MappingConfig& b) {
  return a.g_min == b.g_min && a.g_max == b.g_max && a.w_min == b.w_min && a.w_max == b.w_max;
}

int cmd_eval(Run& run, const std::vector<std::string>& checkpoint_paths) {
  if (checkpoint_paths.empty()) throw ConfigError("eval: at least one --checkpoint is required");
  for (const auto& p : checkpoint_paths) run.inputs["files"][p] = file_digest(p);
  run.inputs["checkpoints"] = checkpoint_paths;
  record_profile_inputs(run);
  run.finalize();
  std::vector<io::Checkpoint> ckpts;
  for (const auto& p : checkpoint_paths) ckpts.push_back(io::read_checkpoint(p));
  const auto profiles = build_profiles(run.cfg, false);
  for (const auto& c : ckpts)
    for (const auto& p : profiles)
      if (c.mapping && !same_mapping(*c.mapping, p.mapping))
        throw ConfigError(fmt::format("profile '{}' mapping differs from the one checkpoint '{}' was trained with",
                                      p.id, c.prior_reference));
  const auto data = load_data(run);

  eval::EvalReport report;
  report.runs = run.cfg.eval.runs;
  for (const auto& c : ckpts) {
    const auto net = c.deployable();
    const double clean = eval::evaluate_accuracy(net, data.test);
    for (const auto& p : profiles) {
      eval::CellSummary cell{eval::parse_framework(c.framework), p.id, c.train_seed, clean, {}};
      cell.noisy = eval::noisy_inference(net, p, data.test, run.cfg.eval.runs,
                                         mix_seed(run.cfg.seed, c.train_seed), run.cfg.threads,
                                         injection_space(run.cfg));
      for (int r = 0; r < run.cfg.eval.runs; ++r)
        report.rows.push_back({cell.framework, p.id, c.train_seed, r, cell.noisy.runs[static_cast<std::size_t>(r)]});
      fmt::print("{:12s} {:10s} clean {:.4f}  noisy {:.4f}{}\n", c.framework, p.id, clean, cell.noisy.mean,
                 cell.noisy.std ? fmt::format(" +- {:.4f}", *cell.noisy.std) : std::string{});
      report.cells.push_back(std::move(cell));
    }
  }
  io::write_atomic(run.out / "report.csv", io::report_to_csv(report, run.hash));
  io::write_atomic(run.out / "summary.csv", io::summary_to_csv(report, run.hash));
  io::write_atomic(run.out / "report.json", io::report_to_json(report, run.hash).dump(2) + "\n");
  return kExitOk;
}

int cmd_compare(Run& run, const std::vector<std::string>& frameworks) {
  eval::CompareConfig cc;
  if (!frameworks.empty()) {
    cc.frameworks.clear();
    for (const auto& f : frameworks) cc.frameworks.push_back(eval::parse_framework(f));
  }
  run.inputs["frameworks"] = json::array();
  for (auto f : cc.frameworks) run.inputs["frameworks"].push_back(eval::framework_name(f));
  record_profile_inputs(run);
  const auto data = load_data(run);
  run.finalize();
  const auto profiles = build_profiles(run.cfg, true);
  cc.spec = run.cfg.network;
  cc.train = run.cfg.train;
  cc.train_seeds = train_seeds(run.cfg);
  cc.runs = run.cfg.eval.runs;
  cc.eval_seed = run.cfg.seed;
  cc.det_noisy_sigma_rel = run.cfg.det_noisy_sigma_rel;
  cc.space = injection_space(run.cfg);
  cc.threads = run.cfg.threads;
  const auto report = eval::compare_frameworks(data, profiles, cc);
  io::write_atomic(run.out / "report.csv", io::report_to_csv(report, run.hash));
  io::write_atomic(run.out / "summary.csv", io::summary_to_csv(report, run.hash));
  io::write_atomic(run.out / "report.json", io::report_to_json(report, run.hash).dump(2) + "\n");
  for (const auto& p : profiles)
    for (auto f : cc.frameworks)
      if (auto m = report.mean_noisy(f, p.id))
        fmt::print("{:12s} {:10s} clean {:.4f}  noisy {:.4f}\n", eval::framework_name(f), p.id,
                   *report.mean_clean(f, p.id), *m);
  for (const auto& f : report.failures)
    fmt::print(stderr, "failed: {} / {} / seed {}: {}\n", eval::framework_name(f.framework), f.profile,
               f.train_seed, f.message);
  return report.failures.empty() ? kExitOk : kExitNumerical;
}

int cmd_dynamics(Run& run) {
  record_profile_inputs(run);
  const auto data = load_data(run);
  run.finalize();
  const auto profiles = build_profiles(run.cfg, false);
  eval::DynamicsConfig dc;
  dc.spec = run.cfg.network;
  dc.train = run.cfg.train;
  dc.train_seeds = train_seeds(run.cfg);
  dc.runs = run.cfg.eval.runs;
  dc.eval_seed = run.cfg.seed;
  dc.window = run.cfg.eval.window;
  dc.tolerance = run.cfg.eval.tolerance;
  dc.space = injection_space(run.cfg);
  dc.threads = run.cfg.threads;
  const auto curves = eval::training_dynamics(data, profiles, dc);
  io::write_atomic(run.out / "dynamics.csv", io::dynamics_to_csv(curves, run.hash));
  io::write_atomic(run.out / "dynamics.json", io::dynamics_to_json(curves, run.hash).dump(2) + "\n");
  for (const auto& c : curves)
    fmt::print("{:10s} seed {:3d}  converged at epoch {:3d}  final noisy {:.4f}\n", c.profile, c.train_seed,
               c.convergence_epoch, c.points.empty() ? 0.0 : c.points.back().noisy_acc);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Variation-aware Bayesian neural networks on simulated FeFET arrays", "ferrobnn"};
  app.require_subcommand(1);
  std::vector<std::shared_ptr<void>> cleanup;  // owns the Override objects

  // simulate
  CommonOptions sim_o;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo program sweeps -> trace CSVs");
  add_common(sim, sim_o);
  auto* devices = add_override<int>(sim, cleanup, "--devices", "Number of devices");
  auto* cycles = add_override<int>(sim, cleanup, "--cycles", "Program cycles per device");
  auto* width = add_override<double>(sim, cleanup, "--width", "Device width (um)");
  auto* length = add_override<double>(sim, cleanup, "--length", "Device length (um)");
  auto* domains = add_override<int>(sim, cleanup, "--domains", "Domain count (default: from area)");
  auto* vread = add_override<double>(sim, cleanup, "--read-voltage", "Read gate voltage (V)");

  // characterize
  CommonOptions ch_o;
  std::string traces_dir;
  auto* ch = app.add_subcommand("characterize", "Trace CSVs -> variation stats and polynomial fit");
  add_common(ch, ch_o);
  ch->add_option("--traces", traces_dir, "Directory of trace CSVs (default: <out>/traces)");
  auto* ch_mode = add_override<std::string>(ch, cleanup, "--mode", "combined, c2c or d2d");
  auto* ch_degree = add_override<int>(ch, cleanup, "--degree", "Polynomial degree");
  auto* ch_min = add_override<int>(ch, cleanup, "--min-samples", "Minimum samples per level");

  // fit
  CommonOptions fit_o;
  std::string stats_path;
  bool reference = false;
  double fit_scale = 1.0;
  auto* fitc = app.add_subcommand("fit", "Stats CSV (or the built-in reference cubic) -> fit record");
  add_common(fitc, fit_o);
  fitc->add_option("--stats", stats_path, "Stats CSV")->check(CLI::ExistingFile);
  fitc->add_flag("--reference", reference, "Emit the built-in reference cubic");
  fitc->add_option("--scale", fit_scale, "Multiply sigma by this factor");
  auto* fit_degree = add_override<int>(fitc, cleanup, "--degree", "Polynomial degree");

  // shared by train / eval / compare / dynamics
  struct LearnOptions {
    Override<std::string>* dataset;
    Override<int>* subset;
    Override<int>* test_subset;
    Override<int>* epochs;
    Override<double>* kl_weight;
    Override<double>* lr;
    Override<int>* batch;
    Override<int>* runs;
    Override<int>* seeds;
    Override<std::string>* space;
    std::vector<std::string> profiles;
    CLI::Option* profiles_opt;
    std::vector<int> hidden;
  };
  auto add_learn = [&](CLI::App* a, LearnOptions& l, bool training, const char* profile_flag) {
    l.dataset = add_override<std::string>(a, cleanup, "--dataset", "toy-linear, toy-blobs or an IDX directory");
    l.subset = add_override<int>(a, cleanup, "--subset", "Stratified train subset size");
    l.test_subset = add_override<int>(a, cleanup, "--test-subset", "Stratified test subset size");
    l.epochs = training ? add_override<int>(a, cleanup, "--epochs", "Training epochs") : nullptr;
    l.kl_weight = training ? add_override<double>(a, cleanup, "--kl-weight", "KL weight") : nullptr;
    l.lr = training ? add_override<double>(a, cleanup, "--lr", "Initial learning rate") : nullptr;
    l.batch = training ? add_override<int>(a, cleanup, "--batch-size", "Mini-batch size") : nullptr;
    l.runs = add_override<int>(a, cleanup, "--runs", "Noisy inference runs");
    l.seeds = add_override<int>(a, cleanup, "--train-seeds", "Paired training seeds");
    l.space = add_override<std::string>(a, cleanup, "--space", "Noise injection space: weight or conductance");
    l.profiles_opt = a->add_option(profile_flag, l.profiles, "[id=]reference|fit.json[*scale]");
    if (training)
      a->add_option("--hidden", l.hidden, "Hidden widths; input and output widths follow the dataset")
          ->delimiter(',');
  };
  auto apply_learn = [](const LearnOptions& l, Run& run) {
    auto& cfg = run.cfg;
    run.hidden = l.hidden;
    l.dataset->apply(cfg.dataset.name);
    l.subset->apply(cfg.dataset.subset);
    l.test_subset->apply(cfg.dataset.test_subset);
    if (l.epochs) l.epochs->apply(cfg.train.epochs);
    if (l.kl_weight) l.kl_weight->apply(cfg.train.kl_weight);
    if (l.lr) l.lr->apply(cfg.train.learning_rate);
    if (l.batch) l.batch->apply(cfg.train.batch_size);
    l.runs->apply(cfg.eval.runs);
    l.seeds->apply(cfg.eval.train_seeds);
    l.space->apply(cfg.eval.space);
    if (l.profiles_opt->count()) {
      cfg.profiles.clear();
      for (std::size_t i = 0; i < l.profiles.size(); ++i) cfg.profiles.push_back(parse_profile_arg(l.profiles[i], i));
    }
  };

  CommonOptions train_o;
  LearnOptions train_l;
  auto* train = app.add_subcommand("train", "Train one framework -> checkpoint + metrics CSV");
  add_common(train, train_o);
  add_learn(train, train_l, true, "--fit");
  auto* framework = add_override<std::string>(train, cleanup, "--framework",
                                              "bayes-aware, bayes-fixed, det-noisy or det-clean");
  auto* sigma_rel = add_override<double>(train, cleanup, "--sigma-rel", "det-noisy relative training noise");

  CommonOptions eval_o;
  LearnOptions eval_l;
  std::vector<std::string> checkpoints;
  auto* evalc = app.add_subcommand("eval", "Noisy inference of checkpoints under variation profiles");
  add_common(evalc, eval_o);
  add_learn(evalc, eval_l, false, "--profile");
  evalc->add_option("--checkpoint", checkpoints, "Checkpoint file(s)")->check(CLI::ExistingFile);

  CommonOptions cmp_o;
  LearnOptions cmp_l;
  std::vector<std::string> frameworks;
  auto* cmp = app.add_subcommand("compare", "Train and evaluate all frameworks under each profile");
  add_common(cmp, cmp_o);
  add_learn(cmp, cmp_l, true, "--profile");
  cmp->add_option("--frameworks", frameworks, "Subset of frameworks to run");
  auto* cmp_sigma_rel = add_override<double>(cmp, cleanup, "--sigma-rel", "det-noisy relative training noise");

  CommonOptions dyn_o;
  LearnOptions dyn_l;
  auto* dyn = app.add_subcommand("dynamics", "Per-epoch noisy accuracy curves for several profiles");
  add_common(dyn, dyn_o);
  add_learn(dyn, dyn_l, true, "--profile");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (sim->parsed()) {
      Run run{"simulate", base_config(sim_o)};
      auto& d = run.cfg.device;
      devices->apply(d.devices);
      cycles->apply(d.cycles);
      const bool resized = (width->opt->count() || length->opt->count()) && !domains->opt->count();
      width->apply(d.geometry.width_um);
      length->apply(d.geometry.length_um);
      domains->apply(d.geometry.n_domains);
      if (resized) d.geometry = device::DeviceGeometry::from_area(d.geometry.width_um, d.geometry.length_um);
      vread->apply(d.scheme.read_voltage);
      return cmd_simulate(run);
    }
    if (ch->parsed()) {
      Run run{"characterize", base_config(ch_o)};
      ch_mode->apply(run.cfg.characterize.mode);
      ch_degree->apply(run.cfg.characterize.degree);
      ch_min->apply(run.cfg.characterize.min_samples);
      return cmd_characterize(run, traces_dir);
    }
    if (fitc->parsed()) {
      Run run{"fit", base_config(fit_o)};
      fit_degree->apply(run.cfg.characterize.degree);
      return cmd_fit(run, stats_path, reference, fit_scale);
    }
    if (train->parsed()) {
      Run run{"train", base_config(train_o)};
      apply_learn(train_l, run);
      framework->apply(run.cfg.framework);
      sigma_rel->apply(run.cfg.det_noisy_sigma_rel);
      return cmd_train(run);
    }
    if (evalc->parsed()) {
      Run run{"eval", base_config(eval_o)};
      apply_learn(eval_l, run);
      return cmd_eval(run, checkpoints);
    }
    if (cmp->parsed()) {
      Run run{"compare", base_config(cmp_o)};
      apply_learn(cmp_l, run);
      cmp_sigma_rel->apply(run.cfg.det_noisy_sigma_rel);
      return cmd_compare(run, frameworks);
    }
    if (dyn->parsed()) {
      Run run{"dynamics", base_config(dyn_o)};
      apply_learn(dyn_l, run);
      return cmd_dynamics(run);
    }
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return kExitData;
  } catch (const NumericalError& e) {
    fmt::print(stderr, "numerical error: {}\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitOther;
  }
  return kExitOther;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace ferrobnn::cli
