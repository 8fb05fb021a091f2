#include "ferrobnn/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

#include "ferrobnn/common.hpp"

namespace ferrobnn::io {

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::string out;
  for (unsigned i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += fmt::format(".tmp{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", tmp.string()));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error(fmt::format("write failed for '{}'", tmp.string()));
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double x) { return fmt::format("{}", x); }

namespace {

std::string hash_line(const std::string& hash) {
  return hash.empty() ? std::string{} : fmt::format("# config_sha256={}\n", hash);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end)
    throw DataError(fmt::format("{}: '{}' is not a number", where, s));
  return v;
}

long parse_int(const std::string& s, const std::string& where) {
  long v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end)
    throw DataError(fmt::format("{}: '{}' is not an integer", where, s));
  return v;
}

// Header + rows of a CSV, skipping comment and blank lines.
struct Csv {
  std::vector<std::string> header;
  std::vector<std::pair<int, std::vector<std::string>>> rows;  // (line number, cells)
};

Csv parse_csv(const std::string& text, const std::string& source,
              const std::vector<std::string>& expected_header) {
  Csv csv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r" || line.front() == '#') continue;
    auto cells = split(line, ',');
    if (csv.header.empty()) {
      csv.header = cells;
      if (csv.header != expected_header)
        throw DataError(fmt::format("{}:{}: unexpected header '{}'", source, line_no, line));
      continue;
    }
    if (cells.size() != csv.header.size())
      throw DataError(fmt::format("{}:{}: expected {} fields, got {}", source, line_no,
                                  csv.header.size(), cells.size()));
    csv.rows.emplace_back(line_no, std::move(cells));
  }
  if (csv.header.empty()) throw DataError(fmt::format("{}: no header line", source));
  return csv;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string traces_to_csv(const std::vector<device::ConductanceTrace>& traces,
                          const std::string& config_hash) {
  std::string out = hash_line(config_hash);
  out += "device_label,cycle,read_voltage,v_prg,conductance_us\n";
  for (const auto& t : traces) {
    if (t.device_label.find(',') != std::string::npos)
      throw DataError(fmt::format("device label '{}' contains a comma", t.device_label));
    for (const auto& p : t.points)
      out += fmt::format("{},{},{},{},{}\n", t.device_label, t.cycle_index,
                         format_double(t.read_voltage), format_double(p.v_prg),
                         format_double(p.conductance_us));
  }
  return out;
}

std::vector<device::ConductanceTrace> traces_from_csv(const std::string& text,
                                                      const std::string& source) {
  const auto csv = parse_csv(text, source, {"device_label", "cycle", "read_voltage", "v_prg", "conductance_us"});
  std::vector<device::ConductanceTrace> traces;
  for (const auto& [line_no, cells] : csv.rows) {
    const auto where = fmt::format("{}:{}", source, line_no);
    const int cycle = static_cast<int>(parse_int(cells[1], where));
    const double vr = parse_double(cells[2], where);
    if (traces.empty() || traces.back().device_label != cells[0] ||
        traces.back().cycle_index != cycle) {
      traces.push_back({cells[0], cycle, vr, {}});
    } else if (traces.back().read_voltage != vr) {
      throw DataError(fmt::format("{}: read voltage changes within a trace", where));
    }
    traces.back().points.push_back({parse_double(cells[3], where), parse_double(cells[4], where)});
  }
  return traces;
}

void write_traces(const fs::path& path, const std::vector<device::ConductanceTrace>& traces,
                  const std::string& config_hash) {
  write_atomic(path, traces_to_csv(traces, config_hash));
}

std::vector<device::ConductanceTrace> read_traces(const fs::path& path) {
  return traces_from_csv(read_file(path), path.string());
}

std::vector<device::ConductanceTrace> read_trace_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(fmt::format("'{}' is not a directory", dir.string()));
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<device::ConductanceTrace> out;
  for (const auto& f : files) {
    auto t = read_traces(f);
    out.insert(out.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  if (out.empty()) throw DataError(fmt::format("no traces found in '{}'", dir.string()));
  return out;
}

// ---------------------------------------------------------------------------

std::string stats_to_csv(const variation::VariationStats& stats, const std::string& config_hash) {
  if (stats.device_label.find('\n') != std::string::npos)
    throw DataError("device label contains a newline");
  std::string out = hash_line(config_hash);
  out += fmt::format("# read_voltage={}\n# device_label={}\n", format_double(stats.read_voltage),
                     stats.device_label);
  out += "v_prg,mu_us,sigma_us,n\n";
  for (const auto& l : stats.levels)
    out += fmt::format("{},{},{},{}\n", format_double(l.v_prg), format_double(l.mu),
                       format_double(l.sigma), l.n_samples);
  return out;
}

variation::VariationStats stats_from_csv(const std::string& text, const std::string& source) {
  const auto csv = parse_csv(text, source, {"v_prg", "mu_us", "sigma_us", "n"});
  variation::VariationStats stats;
  bool have_voltage = false;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("# read_voltage=", 0) == 0) {
      stats.read_voltage = parse_double(line.substr(15), source + ": read_voltage");
      have_voltage = true;
    } else if (line.rfind("# device_label=", 0) == 0) {
      stats.device_label = line.substr(15);
    }
  }
  if (!have_voltage) throw DataError(fmt::format("{}: missing '# read_voltage=' line", source));
  for (const auto& [line_no, cells] : csv.rows) {
    const auto where = fmt::format("{}:{}", source, line_no);
    stats.levels.push_back({parse_double(cells[0], where), parse_double(cells[1], where),
                            parse_double(cells[2], where), static_cast<int>(parse_int(cells[3], where))});
  }
  return stats;
}

json fit_to_json(const variation::VariationFit& fit, const std::string& config_hash) {
  json j = {{"format", "ferrobnn-variation-fit"},
            {"version", 1},
            {"degree", fit.degree()},
            {"coefficients", fit.coefficients},
            {"read_voltage", fit.read_voltage},
            {"device_label", fit.device_label},
            {"mu_min", fit.mu_min},
            {"mu_max", fit.mu_max},
            {"residual_rms", fit.residual_rms},
            {"sigma_floor", fit.sigma_floor}};
  if (!config_hash.empty()) j["config_sha256"] = config_hash;
  return j;
}

variation::VariationFit fit_from_json(const json& j) {
  try {
    if (j.value("format", "") != "ferrobnn-variation-fit")
      throw DataError("not a variation fit record");
    variation::VariationFit fit;
    fit.coefficients = j.at("coefficients").get<std::vector<double>>();
    fit.read_voltage = j.at("read_voltage").get<double>();
    fit.device_label = j.at("device_label").get<std::string>();
    fit.mu_min = j.at("mu_min").get<double>();
    fit.mu_max = j.at("mu_max").get<double>();
    fit.residual_rms = j.value("residual_rms", 0.0);
    fit.sigma_floor = j.value("sigma_floor", variation::kDefaultSigmaFloor);
    if (j.contains("degree") && j["degree"].get<int>() != fit.degree())
      throw DataError("degree does not match coefficient count");
    fit.validate();
    return fit;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed fit record: {}", e.what()));
  } catch (const ConfigError& e) {
    throw DataError(fmt::format("invalid fit record: {}", e.what()));
  }
}

void write_fit(const fs::path& path, const variation::VariationFit& fit,
               const std::string& config_hash) {
  write_atomic(path, fit_to_json(fit, config_hash).dump(2) + "\n");
}

variation::VariationFit read_fit(const fs::path& path) {
  try {
    return fit_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw DataError(fmt::format("'{}': {}", path.string(), e.what()));
  } catch (const DataError& e) {
    throw DataError(fmt::format("'{}': {}", path.string(), e.what()));
  }
}

json mapping_to_json(const mapping::MappingConfig& cfg) {
  return {{"g_min", cfg.g_min}, {"g_max", cfg.g_max}, {"w_min", cfg.w_min}, {"w_max", cfg.w_max}};
}

mapping::MappingConfig mapping_from_json(const json& j) {
  mapping::MappingConfig cfg;
  cfg.g_min = j.at("g_min").get<double>();
  cfg.g_max = j.at("g_max").get<double>();
  cfg.w_min = j.at("w_min").get<double>();
  cfg.w_max = j.at("w_max").get<double>();
  cfg.validate();
  return cfg;
}

std::string metrics_to_csv(const std::vector<bnn::EpochMetrics>& history,
                           const std::string& config_hash) {
  std::string out = hash_line(config_hash);
  out += "epoch,likelihood,kl,total,train_acc,test_acc\n";
  for (const auto& m : history)
    out += fmt::format("{},{},{},{},{},{}\n", m.epoch, format_double(m.likelihood),
                       format_double(m.kl), format_double(m.total), format_double(m.train_acc),
                       format_double(m.test_acc));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'B', 'N', 'N', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

class BlobWriter {
 public:
  void add(const std::string& name, const double* data, std::size_t n, json& index) {
    index.push_back({{"name", name}, {"count", n}});
    const auto* bytes = reinterpret_cast<const char*>(data);
    blob_.append(bytes, n * sizeof(double));
  }
  template <typename M>
  void add(const std::string& name, const M& m, json& index) {
    add(name, m.data(), static_cast<std::size_t>(m.size()), index);
  }
  const std::string& bytes() const { return blob_; }

 private:
  std::string blob_;
};

class BlobReader {
 public:
  BlobReader(const std::string& bytes, std::size_t offset, const json& index)
      : bytes_(bytes), offset_(offset), index_(index) {}

  std::vector<double> next(const std::string& name) {
    if (pos_ >= index_.size()) throw DataError(fmt::format("checkpoint: missing array '{}'", name));
    const auto& e = index_[pos_++];
    if (e.at("name").get<std::string>() != name)
      throw DataError(fmt::format("checkpoint: expected array '{}', found '{}'", name,
                                  e.at("name").get<std::string>()));
    const auto n = e.at("count").get<std::size_t>();
    if (offset_ + n * sizeof(double) > bytes_.size())
      throw DataError(fmt::format("checkpoint: truncated in array '{}' at byte offset {}", name, offset_));
    std::vector<double> out(n);
    std::memcpy(out.data(), bytes_.data() + offset_, n * sizeof(double));
    offset_ += n * sizeof(double);
    return out;
  }

  template <typename M>
  void fill(const std::string& name, M& m) {
    auto v = next(name);
    if (v.size() != static_cast<std::size_t>(m.size()))
      throw DataError(fmt::format("checkpoint: array '{}' has {} values, expected {}", name, v.size(), m.size()));
    std::copy(v.begin(), v.end(), m.data());
  }

  bool finished() const { return offset_ == bytes_.size() && pos_ == index_.size(); }

 private:
  const std::string& bytes_;
  std::size_t offset_;
  const json& index_;
  std::size_t pos_ = 0;
};

const char* activation_name(bnn::Activation a) { return a == bnn::Activation::Relu ? "relu" : "tanh"; }

bnn::Activation parse_activation(const std::string& s) {
  if (s == "relu") return bnn::Activation::Relu;
  if (s == "tanh") return bnn::Activation::Tanh;
  throw DataError(fmt::format("unknown activation '{}'", s));
}

}  // namespace

bnn::PlainNetwork Checkpoint::deployable() const {
  if (variational) return bnn::snapshot_mean_network(*variational);
  if (plain) return *plain;
  throw DataError("checkpoint holds no network");
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  json meta = {{"framework", ckpt.framework},
               {"widths", ckpt.spec.widths},
               {"activation", activation_name(ckpt.spec.activation)},
               {"kind", ckpt.variational ? "variational" : "plain"},
               {"train_seed", ckpt.train_seed},
               {"epoch", ckpt.epoch},
               {"clean_test_accuracy", ckpt.clean_test_accuracy},
               {"prior_reference", ckpt.prior_reference},
               {"config_sha256", ckpt.config_hash}};
  if (ckpt.mapping) meta["mapping"] = mapping_to_json(*ckpt.mapping);
  json index = json::array();
  BlobWriter blob;
  if (ckpt.variational) {
    for (std::size_t l = 0; l < ckpt.variational->layers().size(); ++l) {
      const auto& L = ckpt.variational->layers()[l];
      blob.add(fmt::format("layer{}.mu_w", l), L.mu_w, index);
      blob.add(fmt::format("layer{}.rho_w", l), L.rho_w, index);
      blob.add(fmt::format("layer{}.mu_b", l), L.mu_b, index);
      blob.add(fmt::format("layer{}.rho_b", l), L.rho_b, index);
    }
  } else if (ckpt.plain) {
    for (std::size_t l = 0; l < ckpt.plain->layers.size(); ++l) {
      blob.add(fmt::format("layer{}.weight", l), ckpt.plain->layers[l].weight, index);
      blob.add(fmt::format("layer{}.bias", l), ckpt.plain->layers[l].bias, index);
    }
  } else {
    throw std::invalid_argument("write_checkpoint: no network");
  }
  if (ckpt.optimizer) {
    meta["optimizer"] = {{"kind", "adam"}, {"steps", ckpt.optimizer->steps}, {"slots", ckpt.optimizer->m.size()}};
    for (std::size_t k = 0; k < ckpt.optimizer->m.size(); ++k) {
      blob.add(fmt::format("adam.m{}", k), ckpt.optimizer->m[k].data(), ckpt.optimizer->m[k].size(), index);
      blob.add(fmt::format("adam.v{}", k), ckpt.optimizer->v[k].data(), ckpt.optimizer->v[k].size(), index);
    }
  }
  meta["arrays"] = index;
  const std::string meta_text = meta.dump();

  std::string out(kMagic, sizeof kMagic);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t meta_len = meta_text.size();
  out.append(reinterpret_cast<const char*>(&version), sizeof version);
  out.append(reinterpret_cast<const char*>(&meta_len), sizeof meta_len);
  out += meta_text;
  out += blob.bytes();
  write_atomic(path, out);
}

Checkpoint read_checkpoint(const fs::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = path.string();
  constexpr std::size_t header = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < header || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw DataError(fmt::format("'{}': not a checkpoint (bad magic at byte offset 0)", where));
  std::uint32_t version = 0;
  std::uint64_t meta_len = 0;
  std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
  std::memcpy(&meta_len, bytes.data() + sizeof kMagic + sizeof version, sizeof meta_len);
  if (version != kCheckpointVersion)
    throw DataError(fmt::format("'{}': unsupported checkpoint version {}", where, version));
  if (header + meta_len > bytes.size())
    throw DataError(fmt::format("'{}': truncated metadata at byte offset {}", where, header));

  try {
    const json meta = json::parse(bytes.substr(header, meta_len));
    Checkpoint ckpt;
    ckpt.framework = meta.at("framework").get<std::string>();
    ckpt.spec.widths = meta.at("widths").get<std::vector<int>>();
    ckpt.spec.activation = parse_activation(meta.at("activation").get<std::string>());
    ckpt.spec.validate();
    ckpt.train_seed = meta.value("train_seed", std::uint64_t{0});
    ckpt.epoch = meta.at("epoch").get<int>();
    ckpt.clean_test_accuracy = meta.at("clean_test_accuracy").get<double>();
    ckpt.prior_reference = meta.value("prior_reference", "");
    ckpt.config_hash = meta.value("config_sha256", "");
    if (meta.contains("mapping")) ckpt.mapping = mapping_from_json(meta["mapping"]);

    const json& index = meta.at("arrays");
    BlobReader reader(bytes, header + meta_len, index);
    const auto kind = meta.at("kind").get<std::string>();
    if (kind == "variational") {
      bnn::VariationalNetwork net(ckpt.spec, 0);
      for (std::size_t l = 0; l < net.layers().size(); ++l) {
        auto& L = net.layers()[l];
        reader.fill(fmt::format("layer{}.mu_w", l), L.mu_w);
        reader.fill(fmt::format("layer{}.rho_w", l), L.rho_w);
        reader.fill(fmt::format("layer{}.mu_b", l), L.mu_b);
        reader.fill(fmt::format("layer{}.rho_b", l), L.rho_b);
      }
      ckpt.variational = std::move(net);
    } else if (kind == "plain") {
      auto net = bnn::init_plain(ckpt.spec, 0);
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        reader.fill(fmt::format("layer{}.weight", l), net.layers[l].weight);
        reader.fill(fmt::format("layer{}.bias", l), net.layers[l].bias);
      }
      ckpt.plain = std::move(net);
    } else {
      throw DataError(fmt::format("unknown network kind '{}'", kind));
    }
    if (meta.contains("optimizer")) {
      AdamState st;
      st.steps = meta["optimizer"].at("steps").get<long>();
      const auto slots = meta["optimizer"].at("slots").get<std::size_t>();
      for (std::size_t k = 0; k < slots; ++k) {
        st.m.push_back(reader.next(fmt::format("adam.m{}", k)));
        st.v.push_back(reader.next(fmt::format("adam.v{}", k)));
      }
      ckpt.optimizer = std::move(st);
    }
    if (!reader.finished()) throw DataError("trailing data after the last array");
    return ckpt;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("'{}': malformed checkpoint metadata: {}", where, e.what()));
  } catch (const DataError& e) {
    throw DataError(fmt::format("'{}': {}", where, e.what()));
  }
}

// ---------------------------------------------------------------------------

std::string report_to_csv(const eval::EvalReport& report, const std::string& config_hash) {
  std::string out = hash_line(config_hash);
  out += "framework,profile,run,accuracy,train_seed\n";
  for (const auto& r : report.rows)
    out += fmt::format("{},{},{},{},{}\n", eval::framework_name(r.framework), r.profile, r.run,
                       format_double(r.accuracy), r.train_seed);
  return out;
}

std::string summary_to_csv(const eval::EvalReport& report, const std::string& config_hash) {
  const bool with_std = report.runs > 1;
  std::string out = hash_line(config_hash);
  out += with_std ? "framework,profile,train_seed,clean_accuracy,mean,std\n"
                  : "framework,profile,train_seed,clean_accuracy,mean\n";
  for (const auto& c : report.cells) {
    out += fmt::format("{},{},{},{},{}", eval::framework_name(c.framework), c.profile, c.train_seed,
                       format_double(c.clean_accuracy), format_double(c.noisy.mean));
    if (with_std) out += "," + format_double(c.noisy.std.value_or(0.0));
    out += "\n";
  }
  return out;
}

json report_to_json(const eval::EvalReport& report, const std::string& config_hash) {
  json cells = json::array();
  for (const auto& c : report.cells) {
    json cell = {{"framework", eval::framework_name(c.framework)},
                 {"profile", c.profile},
                 {"train_seed", c.train_seed},
                 {"clean_accuracy", c.clean_accuracy},
                 {"mean", c.noisy.mean},
                 {"runs", c.noisy.runs}};
    if (c.noisy.std) cell["std"] = *c.noisy.std;
    cells.push_back(cell);
  }
  // Aggregates keyed by (framework, profile), in first-appearance order.
  json aggregates = json::array();
  std::vector<std::pair<eval::Framework, std::string>> keys;
  for (const auto& c : report.cells)
    if (std::find(keys.begin(), keys.end(), std::make_pair(c.framework, c.profile)) == keys.end())
      keys.emplace_back(c.framework, c.profile);
  for (const auto& [f, p] : keys) {
    std::vector<double> all_runs, seed_means, cleans;
    for (const auto& c : report.cells)
      if (c.framework == f && c.profile == p) {
        all_runs.insert(all_runs.end(), c.noisy.runs.begin(), c.noisy.runs.end());
        seed_means.push_back(c.noisy.mean);
        cleans.push_back(c.clean_accuracy);
      }
    json a = {{"framework", eval::framework_name(f)},
              {"profile", p},
              {"train_seeds", seed_means.size()},
              {"mean", eval::mean_of(all_runs)},
              {"clean_mean", eval::mean_of(cleans)}};
    if (all_runs.size() > 1) a["std"] = eval::sample_std(all_runs);
    if (seed_means.size() > 1) a["std_over_seeds"] = eval::sample_std(seed_means);
    aggregates.push_back(a);
  }
  json failures = json::array();
  for (const auto& f : report.failures)
    failures.push_back({{"framework", eval::framework_name(f.framework)},
                        {"profile", f.profile},
                        {"train_seed", f.train_seed},
                        {"error", f.message}});
  json j = {{"runs", report.runs}, {"cells", cells}, {"aggregates", aggregates}, {"failures", failures}};
  if (!config_hash.empty()) j["config_sha256"] = config_hash;
  return j;
}

std::string dynamics_to_csv(const std::vector<eval::DynamicsCurve>& curves,
                            const std::string& config_hash) {
  std::string out = hash_line(config_hash);
  out += "profile,train_seed,epoch,test_acc,noisy_acc\n";
  for (const auto& c : curves)
    for (const auto& p : c.points)
      out += fmt::format("{},{},{},{},{}\n", c.profile, c.train_seed, p.epoch,
                         format_double(p.test_acc), format_double(p.noisy_acc));
  return out;
}

json dynamics_to_json(const std::vector<eval::DynamicsCurve>& curves, const std::string& config_hash) {
  json arr = json::array();
  for (const auto& c : curves)
    arr.push_back({{"profile", c.profile},
                   {"train_seed", c.train_seed},
                   {"epochs", c.points.size()},
                   {"convergence_epoch", c.convergence_epoch},
                   {"final_noisy_acc", c.points.empty() ? 0.0 : c.points.back().noisy_acc}});
  json j = {{"curves", arr}};
  if (!config_hash.empty()) j["config_sha256"] = config_hash;
  return j;
}

}  // namespace ferrobnn::io
