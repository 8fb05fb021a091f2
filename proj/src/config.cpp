#include "ferrobnn/config.hpp"

#include <cstdlib>
#include <fmt/format.h>
#include <set>

#include "ferrobnn/common.hpp"
#include "ferrobnn/io.hpp"

namespace ferrobnn::config {

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("config: '{}' must be an object", path_));
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(fmt::format("config: '{}{}' has the wrong type", prefix(), key));
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string child_path(const char* key) const { return prefix() + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(fmt::format("config: unknown key '{}{}'", prefix(), k));
  }

 private:
  std::string prefix() const { return path_.empty() ? std::string{} : path_ + "."; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string kl_direction_name(bnn::KlDirection d) {
  return d == bnn::KlDirection::PriorToPosterior ? "prior-posterior" : "posterior-prior";
}

bnn::KlDirection parse_kl_direction(const std::string& s) {
  if (s == "prior-posterior") return bnn::KlDirection::PriorToPosterior;
  if (s == "posterior-prior") return bnn::KlDirection::PosteriorToPrior;
  throw ConfigError(fmt::format("config: kl_direction must be prior-posterior or posterior-prior, got '{}'", s));
}

bnn::PriorCadence parse_cadence(const std::string& s) {
  if (s == "iteration") return bnn::PriorCadence::Iteration;
  if (s == "epoch") return bnn::PriorCadence::Epoch;
  throw ConfigError(fmt::format("config: prior_cadence must be iteration or epoch, got '{}'", s));
}

}  // namespace

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
  device.geometry.validate();
  device.sim.validate();
  device.scheme.validate();
  if (device.devices < 1 || device.cycles < 1)
    throw ConfigError("config: device.devices and device.cycles must be >= 1");
  if (characterize.mode != "combined" && characterize.mode != "c2c" && characterize.mode != "d2d")
    throw ConfigError(fmt::format("config: characterize.mode must be combined, c2c or d2d, got '{}'",
                                  characterize.mode));
  if (characterize.degree < 0 || characterize.degree > variation::kMaxDegree)
    throw ConfigError("config: characterize.degree must be in [0, 9]");
  if (characterize.min_samples < 2) throw ConfigError("config: characterize.min_samples must be >= 2");
  if (mapping) mapping->validate();
  network.validate();
  train.validate();
  if (framework != "bayes-aware" && framework != "bayes-fixed" && framework != "det-noisy" &&
      framework != "det-clean")
    throw ConfigError(fmt::format("config: unknown framework '{}'", framework));
  if (dataset.subset < 0 || dataset.test_subset < 0)
    throw ConfigError("config: dataset subsets must be >= 0");
  for (const auto& p : profiles)
    if (!(p.scale >= 0.0)) throw ConfigError(fmt::format("config: profile '{}' scale must be >= 0", p.id));
  if (eval.runs < 1) throw ConfigError("config: eval.runs must be >= 1");
  if (eval.space != "weight" && eval.space != "conductance")
    throw ConfigError("config: eval.space must be weight or conductance");
  if (eval.train_seeds < 1) throw ConfigError("config: eval.train_seeds must be >= 1");
  if (eval.window < 1) throw ConfigError("config: eval.window must be >= 1");
  if (!(eval.tolerance >= 0.0)) throw ConfigError("config: eval.tolerance must be >= 0");
}

json to_json(const RunConfig& c) {
  const auto& g = c.device.geometry;
  const auto& s = c.device.sim;
  const auto& p = c.device.scheme;
  json profiles = json::array();
  for (const auto& pr : c.profiles) profiles.push_back({{"id", pr.id}, {"fit", pr.fit}, {"scale", pr.scale}});
  json j = {
      {"seed", c.seed},
      {"threads", c.threads},
      {"output_dir", c.output_dir},
      {"device",
       {{"width_um", g.width_um},
        {"length_um", g.length_um},
        {"n_domains", g.n_domains},
        {"devices", c.device.devices},
        {"cycles", c.device.cycles},
        {"sim",
         {{"beta", s.beta},
          {"tau0", s.tau0},
          {"nls_exponent", s.nls_exponent},
          {"fe_thickness_nm", s.fe_thickness_nm},
          {"ea_mean", s.ea_mean},
          {"ea_std", s.ea_std},
          {"dt", s.dt},
          {"vth0", s.fet.vth0},
          {"delta_vth_max", s.fet.delta_vth_max},
          {"k_prime", s.fet.k_prime}}},
        {"pulse",
         {{"reset_amplitude", p.reset_amplitude},
          {"reset_width", p.reset_width},
          {"program_start", p.program_start},
          {"program_stop", p.program_stop},
          {"program_step", p.program_step},
          {"program_width", p.program_width},
          {"read_voltage", p.read_voltage},
          {"drain_read", p.drain_read},
          {"drain_program", p.drain_program}}}}},
      {"characterize",
       {{"mode", c.characterize.mode},
        {"degree", c.characterize.degree},
        {"min_samples", c.characterize.min_samples}}},
      {"network",
       {{"widths", c.network.widths},
        {"activation", c.network.activation == bnn::Activation::Relu ? "relu" : "tanh"}}},
      {"train",
       {{"framework", c.framework},
        {"kl_weight", c.train.kl_weight},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"lr_decay", c.train.lr_decay},
        {"lr_decay_every", c.train.lr_decay_every},
        {"epochs", c.train.epochs},
        {"mc_samples", c.train.mc_samples},
        {"init_sigma", c.train.init_sigma},
        {"kl_direction", kl_direction_name(c.train.kl_direction)},
        {"prior_cadence", c.train.prior_cadence == bnn::PriorCadence::Iteration ? "iteration" : "epoch"},
        {"sigma_conversion",
         c.train.sigma_conversion == mapping::SigmaConversion::Jacobian ? "jacobian" : "multiplicative"},
        {"det_noisy_sigma_rel", c.det_noisy_sigma_rel}}},
      {"dataset",
       {{"name", c.dataset.name},
        {"subset", c.dataset.subset},
        {"test_subset", c.dataset.test_subset},
        {"seed", c.dataset.seed}}},
      {"profiles", profiles},
      {"eval",
       {{"runs", c.eval.runs},
        {"space", c.eval.space},
        {"train_seeds", c.eval.train_seeds},
        {"window", c.eval.window},
        {"tolerance", c.eval.tolerance}}},
  };
  if (c.mapping) j["mapping"] = io::mapping_to_json(*c.mapping);
  return j;
}

RunConfig from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  root.get("output_dir", c.output_dir);

  if (const json* d = root.child("device")) {
    Section s(*d, "device");
    auto& g = c.device.geometry;
    s.get("width_um", g.width_um);
    s.get("length_um", g.length_um);
    if (d->contains("n_domains")) {
      s.get("n_domains", g.n_domains);
    } else {
      g.n_domains = std::max(1, static_cast<int>(std::lround(device::kDefaultDomainDensity *
                                                             g.width_um * g.length_um)));
    }
    s.get("devices", c.device.devices);
    s.get("cycles", c.device.cycles);
    if (const json* sim = s.child("sim")) {
      Section ss(*sim, "device.sim");
      auto& p = c.device.sim;
      ss.get("beta", p.beta);
      ss.get("tau0", p.tau0);
      ss.get("nls_exponent", p.nls_exponent);
      ss.get("fe_thickness_nm", p.fe_thickness_nm);
      ss.get("ea_mean", p.ea_mean);
      ss.get("ea_std", p.ea_std);
      ss.get("dt", p.dt);
      ss.get("vth0", p.fet.vth0);
      ss.get("delta_vth_max", p.fet.delta_vth_max);
      ss.get("k_prime", p.fet.k_prime);
      ss.finish();
    }
    if (const json* pulse = s.child("pulse")) {
      Section ps(*pulse, "device.pulse");
      auto& p = c.device.scheme;
      ps.get("reset_amplitude", p.reset_amplitude);
      ps.get("reset_width", p.reset_width);
      ps.get("program_start", p.program_start);
      ps.get("program_stop", p.program_stop);
      ps.get("program_step", p.program_step);
      ps.get("program_width", p.program_width);
      ps.get("read_voltage", p.read_voltage);
      ps.get("drain_read", p.drain_read);
      ps.get("drain_program", p.drain_program);
      ps.finish();
    }
    s.finish();
  }

  if (const json* ch = root.child("characterize")) {
    Section s(*ch, "characterize");
    s.get("mode", c.characterize.mode);
    s.get("degree", c.characterize.degree);
    s.get("min_samples", c.characterize.min_samples);
    s.finish();
  }

  if (const json* m = root.child("mapping")) {
    Section s(*m, "mapping");
    mapping::MappingConfig cfg;
    s.get("g_min", cfg.g_min);
    s.get("g_max", cfg.g_max);
    s.get("w_min", cfg.w_min);
    s.get("w_max", cfg.w_max);
    s.finish();
    c.mapping = cfg;
  }

  if (const json* n = root.child("network")) {
    Section s(*n, "network");
    s.get("widths", c.network.widths);
    std::string act = "relu";
    s.get("activation", act);
    if (act == "relu") {
      c.network.activation = bnn::Activation::Relu;
    } else if (act == "tanh") {
      c.network.activation = bnn::Activation::Tanh;
    } else {
      throw ConfigError(fmt::format("config: network.activation must be relu or tanh, got '{}'", act));
    }
    s.finish();
  }

  if (const json* t = root.child("train")) {
    Section s(*t, "train");
    auto& tc = c.train;
    s.get("framework", c.framework);
    s.get("kl_weight", tc.kl_weight);
    s.get("batch_size", tc.batch_size);
    s.get("learning_rate", tc.learning_rate);
    s.get("lr_decay", tc.lr_decay);
    s.get("lr_decay_every", tc.lr_decay_every);
    s.get("epochs", tc.epochs);
    s.get("mc_samples", tc.mc_samples);
    s.get("init_sigma", tc.init_sigma);
    std::string dir = kl_direction_name(tc.kl_direction);
    s.get("kl_direction", dir);
    tc.kl_direction = parse_kl_direction(dir);
    std::string cadence = "iteration";
    s.get("prior_cadence", cadence);
    tc.prior_cadence = parse_cadence(cadence);
    std::string conversion = "jacobian";
    s.get("sigma_conversion", conversion);
    if (conversion == "jacobian")
      tc.sigma_conversion = mapping::SigmaConversion::Jacobian;
    else if (conversion == "multiplicative")
      tc.sigma_conversion = mapping::SigmaConversion::Multiplicative;
    else
      throw ConfigError(fmt::format("config: sigma_conversion must be jacobian or multiplicative, got '{}'", conversion));
    s.get("det_noisy_sigma_rel", c.det_noisy_sigma_rel);
    s.finish();
  }

  if (const json* d = root.child("dataset")) {
    Section s(*d, "dataset");
    s.get("name", c.dataset.name);
    s.get("subset", c.dataset.subset);
    s.get("test_subset", c.dataset.test_subset);
    s.get("seed", c.dataset.seed);
    s.finish();
  }

  if (const json* ps = root.child("profiles")) {
    if (!ps->is_array()) throw ConfigError("config: 'profiles' must be an array");
    for (std::size_t i = 0; i < ps->size(); ++i) {
      Section s((*ps)[i], fmt::format("profiles[{}]", i));
      ProfileSpec p;
      s.get("id", p.id);
      s.get("fit", p.fit);
      s.get("scale", p.scale);
      s.finish();
      if (p.id.empty()) p.id = fmt::format("p{}", i);
      c.profiles.push_back(p);
    }
  }

  if (const json* e = root.child("eval")) {
    Section s(*e, "eval");
    s.get("runs", c.eval.runs);
    s.get("space", c.eval.space);
    s.get("train_seeds", c.eval.train_seeds);
    s.get("window", c.eval.window);
    s.get("tolerance", c.eval.tolerance);
    s.finish();
  }

  root.finish();
  c.validate();
  return c;
}

RunConfig load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  try {
    return from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config '{}': {}", path.string(), e.what()));
  }
}

std::string hash(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  j.erase("threads");
  return io::sha256_hex(j.dump());
}

std::filesystem::path output_root(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("FERROBNN_OUT"); env && *env) return env;
  return "out";
}

}  // namespace ferrobnn::config
