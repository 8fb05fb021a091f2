#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <zlib.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <unistd.h>

#include "ferrobnn/commands.hpp"
#include "ferrobnn/common.hpp"
#include "ferrobnn/config.hpp"
#include "ferrobnn/dataset.hpp"
#include "ferrobnn/io.hpp"

using namespace ferrobnn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kSourceDir = FERROBNN_SOURCE_DIR;

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("ferrobnn_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& s) const { return (path / s).string(); }
};

int run(std::vector<std::string> args) { return cli::run_cli(args); }

void put_be32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xFF));
}

std::string idx_images(int n, int rows, int cols, std::uint32_t magic = 2051) {
  std::string s;
  put_be32(s, magic);
  put_be32(s, static_cast<std::uint32_t>(n));
  put_be32(s, static_cast<std::uint32_t>(rows));
  put_be32(s, static_cast<std::uint32_t>(cols));
  for (int i = 0; i < n * rows * cols; ++i) s.push_back(static_cast<char>((i * 37) % 256));
  return s;
}

std::string idx_labels(const std::vector<int>& labels, std::uint32_t magic = 2049) {
  std::string s;
  put_be32(s, magic);
  put_be32(s, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) s.push_back(static_cast<char>(l));
  return s;
}

void write_raw(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  f << bytes;
}

void write_gz(const fs::path& p, const std::string& bytes) {
  gzFile f = gzopen(p.string().c_str(), "wb");
  REQUIRE(f != nullptr);
  gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
}

std::vector<int> cyclic_labels(int n, int classes) {
  std::vector<int> l;
  for (int i = 0; i < n; ++i) l.push_back(i % classes);
  return l;
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  return out;
}

std::vector<std::string> csv_lines(const fs::path& p) {
  std::istringstream in(io::read_file(p));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::vector<std::string> toy_args() { return {"--dataset", "toy-linear", "--hidden", "8", "--lr", "0.01", "--batch-size", "32"}; }

template <typename... T>
std::vector<std::string> concat(std::vector<std::string> a, const T&... rest) {
  (a.insert(a.end(), rest.begin(), rest.end()), ...);
  return a;
}

}  // namespace

TEST_CASE("IDX ingestion") {
  TempDir dir;
  SUBCASE("plain and gzip files") {
    write_raw(dir.path / "img", idx_images(3, 2, 2));
    write_gz(dir.path / "img.gz", idx_images(3, 2, 2));
    const auto a = data::read_idx_images(dir.path / "img");
    const auto b = data::read_idx_images(dir.path / "img.gz");
    CHECK(a.rows() == 3);
    CHECK(a.cols() == 4);
    CHECK(a == b);
    CHECK(a(0, 1) == doctest::Approx(37.0 / 255.0));
    CHECK(a.maxCoeff() <= 1.0);
    write_raw(dir.path / "lbl", idx_labels({1, 0, 2}));
    CHECK(data::read_idx_labels(dir.path / "lbl") == std::vector<int>{1, 0, 2});
  }
  SUBCASE("bad magic names the offset") {
    write_raw(dir.path / "img", idx_images(3, 2, 2, 2049));
    try {
      data::read_idx_images(dir.path / "img");
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
    write_raw(dir.path / "lbl", idx_labels({1}, 2051));
    CHECK_THROWS_AS(data::read_idx_labels(dir.path / "lbl"), DataError);
  }
  SUBCASE("truncated file names the offset") {
    auto bytes = idx_images(3, 2, 2);
    bytes.resize(bytes.size() - 3);
    write_raw(dir.path / "img", bytes);
    try {
      data::read_idx_images(dir.path / "img");
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
    write_raw(dir.path / "short", std::string("\0\0\x08", 3));
    CHECK_THROWS_AS(data::read_idx_images(dir.path / "short"), DataError);
  }
  SUBCASE("standard train/test layout keeps the file split") {
    write_raw(dir.path / "train-images-idx3-ubyte", idx_images(30, 2, 2));
    write_raw(dir.path / "train-labels-idx1-ubyte", idx_labels(cyclic_labels(30, 3)));
    write_raw(dir.path / "t10k-images-idx3-ubyte", idx_images(9, 2, 2));
    write_raw(dir.path / "t10k-labels-idx1-ubyte", idx_labels(cyclic_labels(9, 3)));
    const auto h = data::load_dataset(dir.path.string());
    CHECK(h.train.size() == 30);
    CHECK(h.test.size() == 9);
    CHECK(h.feature_dim() == 4);
    CHECK(h.classes() == 10);
  }
  SUBCASE("single pool is split per class") {
    write_gz(dir.path / "images-idx3-ubyte.gz", idx_images(60, 2, 2));
    write_gz(dir.path / "labels-idx1-ubyte.gz", idx_labels(cyclic_labels(60, 3)));
    const auto h = data::load_dataset(dir.path.string());
    CHECK(h.train.size() == 48);
    CHECK(h.test.size() == 12);
  }
  SUBCASE("missing directory") {
    CHECK_THROWS_AS(data::load_dataset((dir.path / "nope").string()), DataError);
  }
}

TEST_CASE("bundled MNIST subset") {
  const auto full = data::load_dataset((kSourceDir / "data/mnist10k").string());
  CHECK(full.train.size() == 8000);
  CHECK(full.test.size() == 2000);
  CHECK(full.feature_dim() == 784);
  CHECK(full.classes() == 10);
  CHECK(full.train.features.minCoeff() >= 0.0);
  CHECK(full.train.features.maxCoeff() <= 1.0);

  data::LoadOptions opts;
  opts.subset = 1000;
  opts.test_subset = 500;
  const auto sub = data::load_dataset((kSourceDir / "data/mnist10k").string(), opts);
  CHECK(sub.train.size() == 1000);
  CHECK(sub.test.size() == 500);
  std::vector<int> counts(10, 0);
  for (int l : sub.train.labels) ++counts[static_cast<std::size_t>(l)];
  for (int c : counts) CHECK(c == 100);
}

TEST_CASE("toy datasets") {
  const auto h = data::load_dataset("toy-linear");
  CHECK(h.train.size() + h.test.size() == 1200);
  CHECK(h.classes() == 2);
  data::LoadOptions opts;
  opts.subset = 100;
  CHECK(data::load_dataset("toy-blobs", opts).train.size() == 100);
}

TEST_CASE("file formats round-trip") {
  TempDir dir;
  SUBCASE("traces") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 40.0);
    std::vector<device::ConductanceTrace> traces;
    for (int t = 0; t < 3; ++t) {
      device::ConductanceTrace tr;
      tr.device_label = "W1xL1_d00" + std::to_string(t);
      tr.cycle_index = t;
      tr.read_voltage = 1.2;
      for (int i = 0; i < 5; ++i) tr.points.push_back({2.0 + 0.02 * i, u(rng)});
      traces.push_back(tr);
    }
    const auto text = io::traces_to_csv(traces, "abc123");
    CHECK(text.rfind("# config_sha256=abc123\n", 0) == 0);
    CHECK(text.find("device_label,cycle,read_voltage,v_prg,conductance_us") != std::string::npos);
    CHECK(io::traces_from_csv(text) == traces);
    io::write_traces(dir.path / "t.csv", traces);
    CHECK(io::read_traces(dir.path / "t.csv") == traces);
    CHECK_THROWS_AS(io::traces_from_csv("device_label,cycle\nx,1\n"), DataError);
  }
  SUBCASE("stats") {
    variation::VariationStats s;
    s.read_voltage = 0.8;
    s.device_label = "W1xL1";
    s.levels = {{2.0, 1.0 / 3.0, 0.1, 50}, {2.02, 7.25, 2.0 / 7.0, 50}};
    const auto back = io::stats_from_csv(io::stats_to_csv(s, "h"));
    CHECK(back.read_voltage == 0.8);
    CHECK(back.device_label == "W1xL1");
    REQUIRE(back.levels.size() == 2);
    CHECK(back.levels[0].mu == 1.0 / 3.0);
    CHECK(back.levels[1].sigma == 2.0 / 7.0);
    CHECK(back.levels[1].n_samples == 50);
  }
  SUBCASE("fit record") {
    auto fit = variation::reference_cubic_fit();
    fit.residual_rms = 0.1 / 3.0;
    io::write_fit(dir.path / "fit.json", fit, "h");
    const auto back = io::read_fit(dir.path / "fit.json");
    CHECK(back.coefficients == fit.coefficients);
    CHECK(back.coefficients[3] == 2.1e-4);
    CHECK(back.read_voltage == 1.2);
    CHECK(back.device_label == "W1xL1");
    CHECK(back.mu_max == 35.0);
    CHECK(back.residual_rms == fit.residual_rms);
    auto j = io::fit_to_json(fit);
    j["degree"] = 5;
    CHECK_THROWS(io::fit_from_json(j));
  }
  SUBCASE("mapping") {
    mapping::MappingConfig m{2.0, 34.0, 0.0, 1.0};
    const auto back = io::mapping_from_json(io::mapping_to_json(m));
    CHECK(back.g_min == 2.0);
    CHECK(back.g_max == 34.0);
  }
  SUBCASE("format_double is shortest round-trip") {
    for (double x : {0.1, 1.0 / 3.0, 2.1e-4, 1e300, -0.0, 123456789.125}) CHECK(std::stod(io::format_double(x)) == x);
    CHECK(io::format_double(0.1) == "0.1");
  }
  SUBCASE("checkpoints") {
    bnn::NetworkSpec spec{{3, 4, 2}, bnn::Activation::Tanh};
    io::Checkpoint c;
    c.framework = "bayes-aware";
    c.spec = spec;
    c.variational = bnn::VariationalNetwork(spec, 5);
    c.optimizer = io::AdamState{7, {{1.0, 2.0}, {3.0}}, {{0.5, 0.25}, {0.125}}};
    c.mapping = mapping::MappingConfig{0.0, 35.0, 0.0, 1.0};
    c.prior_reference = "reference";
    c.train_seed = 9;
    c.epoch = 3;
    c.clean_test_accuracy = 0.875;
    c.config_hash = "deadbeef";
    io::write_checkpoint(dir.path / "a.fbnn", c);
    const auto back = io::read_checkpoint(dir.path / "a.fbnn");
    CHECK(back.framework == "bayes-aware");
    CHECK(back.spec.widths == spec.widths);
    CHECK(back.spec.activation == bnn::Activation::Tanh);
    REQUIRE(back.variational.has_value());
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(back.variational->layers()[k].mu_w == c.variational->layers()[k].mu_w);
      CHECK(back.variational->layers()[k].rho_b == c.variational->layers()[k].rho_b);
    }
    REQUIRE(back.optimizer.has_value());
    CHECK(back.optimizer->steps == 7);
    CHECK(back.optimizer->v == c.optimizer->v);
    CHECK(back.mapping->g_max == 35.0);
    CHECK(back.train_seed == 9);
    CHECK(back.clean_test_accuracy == 0.875);
    CHECK(back.deployable().layers[0].weight == c.variational->layers()[0].mu_w);

    io::Checkpoint p;
    p.framework = "det-clean";
    p.spec = spec;
    p.plain = bnn::init_plain(spec, 3);
    io::write_checkpoint(dir.path / "p.fbnn", p);
    const auto pb = io::read_checkpoint(dir.path / "p.fbnn");
    REQUIRE(pb.plain.has_value());
    CHECK(pb.plain->layers[1].bias == p.plain->layers[1].bias);
    CHECK_FALSE(pb.mapping.has_value());

    auto bytes = io::read_file(dir.path / "a.fbnn");
    write_raw(dir.path / "trunc.fbnn", bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(io::read_checkpoint(dir.path / "trunc.fbnn"), DataError);
    bytes[0] = 'X';
    write_raw(dir.path / "magic.fbnn", bytes);
    CHECK_THROWS_AS(io::read_checkpoint(dir.path / "magic.fbnn"), DataError);
  }
  SUBCASE("sha256") {
    CHECK(io::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }
}

TEST_CASE("run configuration") {
  SUBCASE("defaults round-trip") {
    config::RunConfig cfg;
    const auto j = config::to_json(cfg);
    const auto back = config::from_json(j);
    CHECK(config::to_json(back) == j);
    CHECK(j["train"]["kl_weight"] == 0.1);
  }
  SUBCASE("unknown and mistyped keys are rejected") {
    CHECK_THROWS_AS(config::from_json(json{{"sed", 1}}), ConfigError);
    CHECK_THROWS_AS(config::from_json(json{{"train", {{"epoch", 3}}}}), ConfigError);
    CHECK_THROWS_AS(config::from_json(json{{"train", {{"epochs", "three"}}}}), ConfigError);
    CHECK_THROWS_AS(config::from_json(json{{"train", {{"epochs", -1}}}}), ConfigError);
    try {
      config::from_json(json{{"device", {{"sim", {{"betta", 2}}}}}});
      FAIL("expected an error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("device.sim.betta") != std::string::npos);
    }
  }
  SUBCASE("hash ignores output location and thread count") {
    config::RunConfig a, b;
    b.output_dir = "/elsewhere";
    b.threads = 4;
    CHECK(config::hash(a) == config::hash(b));
    b.seed = 1;
    CHECK(config::hash(a) != config::hash(b));
    CHECK(config::hash(a).size() == 64);
  }
  SUBCASE("output root") {
    CHECK(config::output_root("x") == fs::path("x"));
    ::setenv("FERROBNN_OUT", "/tmp/env_root", 1);
    CHECK(config::output_root("") == fs::path("/tmp/env_root"));
    ::unsetenv("FERROBNN_OUT");
    CHECK(config::output_root("") == fs::path("out"));
  }
}

TEST_CASE("exit codes") {
  TempDir dir;
  CHECK(run({}) == cli::kExitConfig);
  CHECK(run({"bogus"}) == cli::kExitConfig);
  CHECK(run({"simulate", "--devices", "notanumber", "-o", dir / "a"}) == cli::kExitConfig);
  write_raw(dir.path / "bad.json", R"({"seed": 1, "colour": "red"})");
  CHECK(run({"simulate", "-c", dir / "bad.json", "-o", dir / "b"}) == cli::kExitConfig);
  CHECK(run({"train", "--dataset", dir / "missing", "--framework", "det-clean", "-o", dir / "c"}) == cli::kExitData);
  CHECK(run(concat({"train", "--framework", "bayes-aware", "-o", dir / "d"}, toy_args())) == cli::kExitConfig);
  CHECK(run({"fit", "-o", dir / "e"}) == cli::kExitConfig);

  SUBCASE("divergence keeps partial metrics") {
    const int code = run(concat({"train", "--framework", "det-clean", "--epochs", "2", "-o", dir / "div"},
                                std::vector<std::string>{"--dataset", "toy-linear", "--hidden", "8", "--lr", "1e250"}));
    CHECK(code == cli::kExitNumerical);
    CHECK(fs::exists(dir.path / "div" / "metrics.csv"));
    CHECK_FALSE(fs::exists(dir.path / "div" / "checkpoint.fbnn"));
  }
}

TEST_CASE("simulate") {
  TempDir dir;
  REQUIRE(run({"simulate", "--devices", "3", "--domains", "200", "-o", dir / "s"}) == 0);
  const auto traces = io::read_trace_dir(dir.path / "s" / "traces");
  CHECK(traces.size() == 3);
  for (const auto& t : traces) CHECK(t.points.size() == 101);
  CHECK(fs::exists(dir.path / "s" / "manifest.json"));
  CHECK(fs::exists(dir.path / "s" / "resolved_config.json"));
  const auto first = csv_lines(dir.path / "s" / "traces" / "W1xL1_d000_c000.csv").front();
  CHECK(first.rfind("# config_sha256=", 0) == 0);

  SUBCASE("200 devices give 200 files") {
    REQUIRE(run({"simulate", "--devices", "200", "--cycles", "1", "--domains", "20", "-o", dir / "many"}) == 0);
    int files = 0;
    for (const auto& e : fs::directory_iterator(dir.path / "many" / "traces")) files += e.path().extension() == ".csv";
    CHECK(files == 200);
  }
  SUBCASE("reruns are byte-identical regardless of threads and location") {
    REQUIRE(run({"simulate", "--devices", "3", "--domains", "200", "--threads", "2", "-o", dir / "s2"}) == 0);
    CHECK(tree_contents(dir.path / "s") == tree_contents(dir.path / "s2"));
    REQUIRE(run({"simulate", "--devices", "3", "--domains", "200", "--seed", "1", "-o", dir / "s3"}) == 0);
    CHECK(tree_contents(dir.path / "s") != tree_contents(dir.path / "s3"));
  }
  SUBCASE("cycle-to-cycle campaign") {
    REQUIRE(run({"simulate", "--devices", "1", "--cycles", "4", "--domains", "50", "-o", dir / "c2c"}) == 0);
    CHECK(io::read_trace_dir(dir.path / "c2c" / "traces").size() == 4);
  }
}

TEST_CASE("characterize") {
  TempDir dir;
  SUBCASE("known generator is recovered") {
    // Samples per level are standardized to exactly the target mean and
    // sample std, so the fit sees the generator's sigma(mu) without
    // sampling error.
    const std::vector<double> coef = {0.0258, 0.788, -0.0214, 2.1e-4};
    constexpr int kLevels = 21, kSamples = 10000;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<std::vector<double>> g(kLevels, std::vector<double>(kSamples));
    for (int l = 0; l < kLevels; ++l) {
      const double mu = 2.0 + 30.0 * l / (kLevels - 1);
      const double sigma = coef[0] + mu * (coef[1] + mu * (coef[2] + mu * coef[3]));
      auto& z = g[static_cast<std::size_t>(l)];
      for (auto& v : z) v = n(rng);
      double m = 0.0, ss = 0.0;
      for (double v : z) m += v;
      m /= kSamples;
      for (double v : z) ss += (v - m) * (v - m);
      const double sd = std::sqrt(ss / (kSamples - 1));
      for (auto& v : z) v = mu + sigma * (v - m) / sd;
    }
    std::vector<device::ConductanceTrace> traces(kSamples);
    for (int s = 0; s < kSamples; ++s) {
      auto& t = traces[static_cast<std::size_t>(s)];
      t.device_label = "gen";
      t.cycle_index = s;
      t.read_voltage = 1.2;
      for (int l = 0; l < kLevels; ++l) t.points.push_back({2.0 + 0.1 * l, g[static_cast<std::size_t>(l)][static_cast<std::size_t>(s)]});
    }
    fs::create_directories(dir.path / "gen");
    io::write_traces(dir.path / "gen" / "all.csv", traces);
    REQUIRE(run({"characterize", "--traces", dir / "gen", "-o", dir / "out"}) == 0);
    const auto fit = io::read_fit(dir.path / "out" / "fit.json");
    REQUIRE(fit.degree() == 3);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(fit.coefficients[i] - coef[i]) <= 1e-3 * std::abs(coef[i]));
    const auto stats = io::stats_from_csv(io::read_file(dir.path / "out" / "stats.csv"));
    CHECK(stats.levels.size() == kLevels);
    CHECK(stats.levels[0].n_samples == kSamples);
  }
  REQUIRE(run({"simulate", "--devices", "6", "--domains", "100", "-o", dir / "sim"}) == 0);
  SUBCASE("degree flag is honored") {
    REQUIRE(run({"characterize", "--traces", dir / "sim/traces", "--degree", "5", "-o", dir / "d5"}) == 0);
    CHECK(io::read_fit(dir.path / "d5" / "fit.json").degree() == 5);
    CHECK(json::parse(io::read_file(dir.path / "d5" / "fit.json"))["degree"] == 5);
  }
  SUBCASE("default traces directory under the output root") {
    CHECK(run({"characterize", "-o", dir / "sim"}) == 0);
    CHECK(fs::exists(dir.path / "sim" / "fit.json"));
  }
  SUBCASE("a single trace is rejected") {
    fs::create_directories(dir.path / "one");
    fs::copy_file(dir.path / "sim/traces/W1xL1_d000_c000.csv", dir.path / "one/x.csv");
    CHECK(run({"characterize", "--traces", dir / "one", "-o", dir / "o1"}) == cli::kExitData);
  }
  SUBCASE("too few samples names the level") {
    CHECK(run({"characterize", "--traces", dir / "sim/traces", "--min-samples", "10", "-o", dir / "o2"}) == cli::kExitData);
  }
  SUBCASE("fit from stats and the reference cubic") {
    REQUIRE(run({"characterize", "--traces", dir / "sim/traces", "-o", dir / "ch"}) == 0);
    REQUIRE(run({"fit", "--stats", dir / "ch/stats.csv", "--degree", "2", "-o", dir / "f"}) == 0);
    CHECK(io::read_fit(dir.path / "f" / "fit.json").degree() == 2);
    REQUIRE(run({"fit", "--reference", "--scale", "2", "-o", dir / "r"}) == 0);
    CHECK(io::read_fit(dir.path / "r" / "fit.json").coefficients[1] == doctest::Approx(1.576));
  }
}

TEST_CASE("train and eval") {
  TempDir dir;
  REQUIRE(run(concat({"train", "--framework", "det-clean", "--epochs", "15", "-o", dir / "det"}, toy_args())) == 0);
  const auto metrics = csv_lines(dir.path / "det" / "metrics.csv");
  CHECK(metrics.size() == 2 + 15);
  CHECK(metrics[1] == "epoch,likelihood,kl,total,train_acc,test_acc");
  {
    std::istringstream last(metrics.back());
    std::vector<std::string> cols;
    for (std::string c; std::getline(last, c, ',');) cols.push_back(c);
    CHECK(std::stod(cols[4]) >= 0.99);
  }
  REQUIRE(run(concat({"train", "--framework", "bayes-aware", "--fit", "reference", "--epochs", "3", "--kl-weight", "0.1", "-o", dir / "bayes"}, toy_args())) == 0);
  const auto resolved = json::parse(io::read_file(dir.path / "bayes" / "resolved_config.json"));
  CHECK(resolved["config"]["train"]["kl_weight"] == 0.1);
  CHECK(io::read_checkpoint(dir.path / "bayes" / "checkpoint.fbnn").variational.has_value());

  SUBCASE("training reruns are byte-identical") {
    REQUIRE(run(concat({"train", "--framework", "bayes-aware", "--fit", "reference", "--epochs", "3", "--kl-weight", "0.1", "-o", dir / "bayes2"}, toy_args())) == 0);
    CHECK(tree_contents(dir.path / "bayes") == tree_contents(dir.path / "bayes2"));
  }
  SUBCASE("eval defaults to five runs") {
    REQUIRE(run({"eval", "--checkpoint", dir / "bayes/checkpoint.fbnn", "--checkpoint", dir / "det/checkpoint.fbnn",
                 "--profile", "ref=reference", "--dataset", "toy-linear", "-o", dir / "ev"}) == 0);
    const auto rows = csv_lines(dir.path / "ev" / "report.csv");
    CHECK(rows[1] == "framework,profile,run,accuracy,train_seed");
    CHECK(rows.size() == 2 + 2 * 5);
    CHECK(csv_lines(dir.path / "ev" / "summary.csv")[1] == "framework,profile,train_seed,clean_accuracy,mean,std");
    const auto j = json::parse(io::read_file(dir.path / "ev" / "report.json"));
    CHECK(j.contains("aggregates"));

    REQUIRE(run({"eval", "--checkpoint", dir / "bayes/checkpoint.fbnn", "--checkpoint", dir / "det/checkpoint.fbnn",
                 "--profile", "ref=reference", "--dataset", "toy-linear", "-o", dir / "ev2"}) == 0);
    CHECK(tree_contents(dir.path / "ev") == tree_contents(dir.path / "ev2"));
    REQUIRE(run({"eval", "--checkpoint", dir / "bayes/checkpoint.fbnn", "--checkpoint", dir / "det/checkpoint.fbnn",
                 "--profile", "ref=reference", "--dataset", "toy-linear", "--seed", "3", "-o", dir / "ev3"}) == 0);
    CHECK(io::read_file(dir.path / "ev" / "report.csv") != io::read_file(dir.path / "ev3" / "report.csv"));
  }
  SUBCASE("a single run drops the std column") {
    REQUIRE(run({"eval", "--checkpoint", dir / "bayes/checkpoint.fbnn", "--profile", "reference", "--runs", "1",
                 "--dataset", "toy-linear", "-o", dir / "one"}) == 0);
    CHECK(csv_lines(dir.path / "one" / "summary.csv")[1] == "framework,profile,train_seed,clean_accuracy,mean");
  }
  SUBCASE("profile mapping must match the checkpoint") {
    REQUIRE(run({"simulate", "--devices", "4", "--domains", "100", "-o", dir / "sim"}) == 0);
    REQUIRE(run({"characterize", "-o", dir / "sim"}) == 0);
    CHECK(run({"eval", "--checkpoint", dir / "bayes/checkpoint.fbnn", "--profile", "sim=" + (dir / "sim/fit.json"),
               "--dataset", "toy-linear", "-o", dir / "mm"}) == cli::kExitConfig);
  }
}

TEST_CASE("compare and dynamics") {
  TempDir dir;
  const std::vector<std::string> common = {"--epochs", "2", "--train-seeds", "2", "--runs", "2", "--profile", "a=reference",
                                           "--profile", "b=reference*0.5"};
  REQUIRE(run(concat({"compare", "-o", dir / "c1"}, toy_args(), common)) == 0);
  const auto rows = csv_lines(dir.path / "c1" / "report.csv");
  CHECK(rows.size() == 2 + 4 * 2 * 2 * 2);
  REQUIRE(run(concat({"compare", "-o", dir / "c2"}, toy_args(), common)) == 0);
  CHECK(tree_contents(dir.path / "c1") == tree_contents(dir.path / "c2"));

  REQUIRE(run(concat({"dynamics", "-o", dir / "d1"}, toy_args(), common)) == 0);
  const auto dyn = csv_lines(dir.path / "d1" / "dynamics.csv");
  CHECK(dyn[1] == "profile,train_seed,epoch,test_acc,noisy_acc");
  CHECK(dyn.size() == 2 + 2 * 2 * 2);
  REQUIRE(run(concat({"dynamics", "-o", dir / "d2"}, toy_args(), common)) == 0);
  CHECK(tree_contents(dir.path / "d1") == tree_contents(dir.path / "d2"));

  CHECK(run(concat({"compare", "-o", dir / "dup"}, toy_args(),
                   std::vector<std::string>{"--epochs", "1", "--profile", "a=reference", "--profile", "a=reference*2"})) == cli::kExitConfig);
}

TEST_CASE("sigma conversion switch") {
  TempDir dir;
  CHECK_THROWS_AS(config::from_json(json{{"train", {{"sigma_conversion", "linear"}}}}), ConfigError);
  const auto cfg = config::from_json(json{{"train", {{"sigma_conversion", "multiplicative"}}}});
  CHECK(cfg.train.sigma_conversion == mapping::SigmaConversion::Multiplicative);
  CHECK(config::hash(cfg) != config::hash(config::RunConfig{}));
  write_raw(dir.path / "mult.json", R"({"train": {"sigma_conversion": "multiplicative"}})");
  REQUIRE(run(concat({"train", "-c", dir / "mult.json", "--framework", "bayes-aware", "--fit", "reference", "--epochs", "2",
                      "-o", dir / "m"}, toy_args())) == 0);
  REQUIRE(run(concat({"train", "--framework", "bayes-aware", "--fit", "reference", "--epochs", "2", "-o", dir / "j"},
                     toy_args())) == 0);
  CHECK(io::read_file(dir.path / "m" / "checkpoint.fbnn") != io::read_file(dir.path / "j" / "checkpoint.fbnn"));
}
