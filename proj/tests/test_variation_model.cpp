#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ferrobnn/common.hpp"
#include "ferrobnn/device_sim.hpp"
#include "ferrobnn/variation_model.hpp"

using namespace ferrobnn;
using namespace ferrobnn::variation;
using device::ConductanceTrace;

namespace {

ConductanceTrace make_trace(std::string label, int cycle, std::vector<double> g,
                            double read_voltage = 1.2) {
  ConductanceTrace t;
  t.device_label = std::move(label);
  t.cycle_index = cycle;
  t.read_voltage = read_voltage;
  for (std::size_t i = 0; i < g.size(); ++i) t.points.push_back({2.0 + 0.5 * i, g[i]});
  return t;
}

double poly(const std::vector<double>& c, double x) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) s += c[i] * std::pow(x, static_cast<double>(i));
  return s;
}

VariationStats synthetic_stats(const std::vector<double>& c, int n_levels, double lo, double hi) {
  VariationStats s;
  s.read_voltage = 1.2;
  s.device_label = "synthetic";
  for (int i = 0; i < n_levels; ++i) {
    const double mu = lo + (hi - lo) * i / (n_levels - 1);
    s.levels.push_back({static_cast<double>(i), mu, poly(c, mu), 10});
  }
  return s;
}

double rss(const VariationStats& s, const std::vector<double>& c) {
  double r = 0.0;
  for (const auto& l : s.levels) r += std::pow(poly(c, l.mu) - l.sigma, 2);
  return r;
}

const std::vector<double> kRef = {0.0258, 0.788, -0.0214, 2.1e-4};

}  // namespace

TEST_CASE("c2c_stats") {
  SUBCASE("identical traces have zero spread") {
    std::vector<ConductanceTrace> t = {make_trace("d", 0, {1, 2, 3}), make_trace("d", 1, {1, 2, 3}),
                                       make_trace("d", 2, {1, 2, 3})};
    for (const auto& l : c2c_stats(t).levels) CHECK(l.sigma == 0.0);
  }
  SUBCASE("two-point sample std") {
    std::vector<ConductanceTrace> t = {make_trace("d", 0, {1.0}), make_trace("d", 1, {3.0})};
    const auto s = c2c_stats(t);
    REQUIRE(s.levels.size() == 1);
    CHECK(s.levels[0].mu == 2.0);
    CHECK(s.levels[0].sigma == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
    CHECK(s.levels[0].n_samples == 2);
    CHECK(s.read_voltage == 1.2);
  }
  SUBCASE("errors") {
    std::vector<ConductanceTrace> one = {make_trace("d", 0, {1.0})};
    CHECK_THROWS_AS(c2c_stats(one), DataError);
    std::vector<ConductanceTrace> mismatch = {make_trace("d", 0, {1.0, 2.0}), make_trace("d", 1, {1.0})};
    CHECK_THROWS_AS(c2c_stats(mismatch), DataError);
    auto shifted = make_trace("d", 1, {1.0, 2.0});
    shifted.points[1].v_prg += 0.01;
    std::vector<ConductanceTrace> grid = {make_trace("d", 0, {1.0, 2.0}), shifted};
    CHECK_THROWS_AS(c2c_stats(grid), DataError);
    std::vector<ConductanceTrace> vread = {make_trace("d", 0, {1.0}), make_trace("d", 1, {1.0}, 0.6)};
    CHECK_THROWS_AS(c2c_stats(vread), DataError);
  }
  SUBCASE("50 simulated cycles agree with a heavily oversampled run") {
    device::SimParams p;
    device::PulseScheme scheme;
    scheme.program_start = 2.8;
    scheme.program_stop = 3.4;
    scheme.program_step = 0.1;
    device::DeviceGeometry g;
    g.n_domains = 500;
    // The 50-cycle sample std has a relative standard error of about
    // 1/sqrt(2 * 49) = 10%; 50 independent 50-cycle estimates are averaged
    // so the 15% band is checked with adequate power.
    const auto ref = c2c_stats(device::monte_carlo_c2c(g, p, scheme, 10000, 1));
    std::vector<double> avg(ref.levels.size(), 0.0);
    constexpr int kRepeats = 50;
    int inside = 0, total = 0;
    for (int r = 0; r < kRepeats; ++r) {
      const auto s = c2c_stats(device::monte_carlo_c2c(g, p, scheme, 50, 100 + r));
      for (std::size_t i = 0; i < s.levels.size(); ++i) {
        avg[i] += s.levels[i].sigma / kRepeats;
        inside += std::abs(s.levels[i].sigma - ref.levels[i].sigma) <= 0.15 * ref.levels[i].sigma;
        ++total;
      }
    }
    for (std::size_t i = 0; i < avg.size(); ++i) {
      CHECK(ref.levels[i].sigma > 0.0);
      CHECK(std::abs(avg[i] - ref.levels[i].sigma) <= 0.15 * ref.levels[i].sigma);
    }
    // A single 50-cycle estimate lands inside +-15% about 86% of the time.
    CHECK(static_cast<double>(inside) / total > 0.75);
  }
}

TEST_CASE("d2d_stats") {
  SUBCASE("three devices") {
    std::vector<ConductanceTrace> t = {make_trace("a", 0, {1, 2}), make_trace("b", 0, {2, 4}),
                                       make_trace("c", 0, {3, 6})};
    const auto s = d2d_stats(t);
    REQUIRE(s.levels.size() == 2);
    for (const auto& l : s.levels) CHECK(l.n_samples == 3);
    CHECK(s.levels[0].mu == doctest::Approx(2.0));
    CHECK(s.levels[0].sigma == doctest::Approx(1.0));
    CHECK(s.levels[1].sigma == doctest::Approx(2.0));
  }
  SUBCASE("duplicate device is rejected") {
    std::vector<ConductanceTrace> t = {make_trace("a", 0, {1}), make_trace("a", 1, {2})};
    CHECK_THROWS_AS(d2d_stats(t), DataError);
  }
  SUBCASE("zero spread and shared flip outcomes") {
    device::SimParams p;
    p.ea_std = 0.0;
    device::PulseScheme scheme;
    device::DeviceGeometry g;
    g.n_domains = 100;
    const auto traces = device::monte_carlo_d2d(g, p, scheme, std::vector<std::uint64_t>(4, 5));
    for (const auto& l : d2d_stats(traces).levels) CHECK(l.sigma == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("fewer domains give larger mid-range spread") {
    device::SimParams p;
    device::PulseScheme scheme;
    scheme.program_start = scheme.program_stop = 3.0;
    device::DeviceGeometry small, large;
    small.n_domains = 50;
    large.n_domains = 5000;
    const auto s = d2d_stats(device::monte_carlo_d2d(small, p, scheme, 200, 9));
    const auto l = d2d_stats(device::monte_carlo_d2d(large, p, scheme, 200, 9));
    CHECK(s.levels[0].sigma > l.levels[0].sigma);
  }
}

TEST_CASE("combined_stats") {
  SUBCASE("a single device reduces to c2c") {
    std::vector<ConductanceTrace> t = {make_trace("d", 0, {1, 5}), make_trace("d", 1, {2, 7}),
                                       make_trace("d", 2, {4, 6})};
    const auto a = combined_stats(t);
    const auto b = c2c_stats(t);
    REQUIRE(a.levels.size() == b.levels.size());
    for (std::size_t i = 0; i < a.levels.size(); ++i) {
      CHECK(a.levels[i].mu == b.levels[i].mu);
      CHECK(a.levels[i].sigma == b.levels[i].sigma);
    }
  }
  SUBCASE("equal samples give zero spread") {
    std::vector<ConductanceTrace> t = {make_trace("a", 0, {3}), make_trace("a", 1, {3}),
                                       make_trace("b", 0, {3})};
    CHECK(combined_stats(t).levels[0].sigma == 0.0);
  }
  SUBCASE("known normal distribution") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(10.0, 0.5);
    std::vector<ConductanceTrace> t;
    for (int d = 0; d < 10; ++d)
      for (int c = 0; c < 100; ++c) t.push_back(make_trace("dev" + std::to_string(d), c, {n(rng), n(rng), n(rng)}));
    for (const auto& l : combined_stats(t).levels) {
      CHECK(l.n_samples == 1000);
      CHECK(std::abs(l.sigma - 0.5) < 0.05 * 0.5);
      CHECK(std::abs(l.mu - 10.0) < 0.1);
    }
  }
  SUBCASE("pooled sample std equals an independent two-pass computation") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 30.0);
    std::vector<ConductanceTrace> t;
    for (int d = 0; d < 4; ++d)
      for (int c = 0; c < 7; ++c) t.push_back(make_trace("dev" + std::to_string(d), c, {u(rng), u(rng)}));
    const auto s = combined_stats(t);
    for (std::size_t i = 0; i < 2; ++i) {
      std::vector<double> xs;
      for (const auto& tr : t) xs.push_back(tr.points[i].conductance_us);
      long double m = 0;
      for (double x : xs) m += x;
      m /= xs.size();
      long double ss = 0;
      for (double x : xs) ss += (x - m) * (x - m);
      CHECK(s.levels[i].sigma == doctest::Approx(static_cast<double>(std::sqrt(ss / (xs.size() - 1)))).epsilon(1e-13));
    }
  }
}

TEST_CASE("fit_polynomial") {
  SUBCASE("noiseless reference cubic is recovered") {
    const auto fit = fit_polynomial(synthetic_stats(kRef, 101, 0.0, 35.0), 3);
    REQUIRE(fit.coefficients.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(std::abs(fit.coefficients[i] - kRef[i]) <= 1e-6 * std::abs(kRef[i]));
    CHECK(fit.residual_rms < 1e-12);
    CHECK(fit.mu_min == 0.0);
    CHECK(fit.mu_max == 35.0);
    CHECK(fit.read_voltage == 1.2);
  }
  SUBCASE("constant data with degree 1") {
    const auto fit = fit_polynomial(synthetic_stats({0.7}, 10, 1.0, 20.0), 1);
    CHECK(fit.coefficients[0] == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(std::abs(fit.coefficients[1]) < 1e-12);
  }
  SUBCASE("four points with degree 3 interpolate exactly") {
    VariationStats s;
    s.levels = {{0, 1.0, 0.3, 2}, {1, 2.0, 0.1, 2}, {2, 5.0, 0.9, 2}, {3, 9.0, 0.4, 2}};
    const auto fit = fit_polynomial(s, 3);
    CHECK(fit.residual_rms < 1e-12);
    for (const auto& l : s.levels) CHECK(poly(fit.coefficients, l.mu) == doctest::Approx(l.sigma).epsilon(1e-10));
  }
  SUBCASE("rank deficiency and bad degrees") {
    VariationStats s;
    s.levels = {{0, 3.0, 0.1, 2}, {1, 3.0, 0.2, 2}, {2, 3.0, 0.3, 2}};
    CHECK_THROWS_AS(fit_polynomial(s, 1), NumericalError);
    CHECK_THROWS_AS(fit_polynomial(synthetic_stats(kRef, 20, 0, 35), 0), ConfigError);
    CHECK_THROWS_AS(fit_polynomial(synthetic_stats(kRef, 20, 0, 35), 10), ConfigError);
    CHECK_THROWS_AS(fit_polynomial(synthetic_stats(kRef, 3, 0, 35), 3), DataError);
  }
  SUBCASE("least-squares optimality") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(0.0, 0.2);
    auto s = synthetic_stats(kRef, 60, 0.0, 35.0);
    for (auto& l : s.levels) l.sigma += noise(rng);
    const auto fit = fit_polynomial(s, 3);
    const double base = rss(s, fit.coefficients);
    for (std::size_t i = 0; i < fit.coefficients.size(); ++i)
      for (double f : {0.99, 1.01}) {
        auto c = fit.coefficients;
        c[i] *= f;
        CHECK(rss(s, c) >= base);
      }
    CHECK(fit.residual_rms == doctest::Approx(std::sqrt(base / 60.0)).epsilon(1e-9));
  }
  SUBCASE("grid invariance on noiseless data") {
    const auto full = synthetic_stats(kRef, 101, 0.0, 35.0);
    VariationStats subset = full;
    subset.levels.clear();
    for (std::size_t i = 0; i < full.levels.size(); i += 7) subset.levels.push_back(full.levels[i]);
    REQUIRE(subset.levels.size() > 4);
    const auto a = fit_polynomial(full, 3);
    const auto b = fit_polynomial(subset, 3);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(b.coefficients[i] == doctest::Approx(a.coefficients[i]).epsilon(1e-8));
  }
  SUBCASE("degree up to 9 is accepted") {
    const std::vector<double> c = {0.1, 0.2, -0.01, 1e-3, 0, 0, 0, 0, 0, 1e-12};
    const auto fit = fit_polynomial(synthetic_stats(c, 60, 0.0, 10.0), 9);
    CHECK(fit.degree() == 9);
    CHECK(fit.residual_rms < 1e-8);
  }
}

TEST_CASE("eval_sigma") {
  const auto ref = reference_cubic_fit();
  CHECK(std::abs(eval_sigma(ref, 0.0) - 0.0258) <= 1e-12);
  CHECK(std::abs(eval_sigma(ref, 10.0) - 5.9758) <= 1e-12);
  VariationFit constant;
  constant.coefficients = {0.42};
  constant.mu_max = 100.0;
  for (double mu = 0.0; mu <= 100.0; mu += 7.5) CHECK(eval_sigma(constant, mu) == 0.42);

  SUBCASE("out-of-range mu is clamped and flagged") {
    const auto hi = eval_sigma_checked(ref, 50.0);
    CHECK(hi.clamped);
    CHECK(hi.sigma == eval_sigma(ref, 35.0));
    const auto lo = eval_sigma_checked(ref, -3.0);
    CHECK(lo.clamped);
    CHECK(lo.sigma == eval_sigma(ref, 0.0));
    CHECK_FALSE(eval_sigma_checked(ref, 17.0).clamped);
  }
  SUBCASE("floor") {
    VariationFit neg;
    neg.coefficients = {1.0, -1.0};
    neg.mu_max = 5.0;
    for (double mu = -1.0; mu < 7.0; mu += 0.05) CHECK(eval_sigma(neg, mu) >= neg.sigma_floor);
    CHECK(eval_sigma(neg, 4.0) == kDefaultSigmaFloor);
    for (double mu = 0.0; mu <= 35.0; mu += 0.1) CHECK(eval_sigma(ref, mu) > 0.0);
  }
}

TEST_CASE("relative_variation") {
  VariationFit half;
  half.coefficients = {0.5};
  half.mu_max = 20.0;
  CHECK(relative_variation(half, 10.0) == doctest::Approx(0.05).epsilon(1e-15));
  const auto ref = reference_cubic_fit();
  CHECK(relative_variation(ref, 10.0) == doctest::Approx(0.59758).epsilon(1e-12));
  CHECK_THROWS(relative_variation(ref, 0.0));
  CHECK_THROWS(relative_variation(ref, -1.0));
  // Decreasing over the upper half of the range, checked with a finite
  // difference of the ratio.
  for (double mu = 17.5; mu < 35.0; mu += 0.25) {
    const double h = 1e-4;
    const double d = (relative_variation(ref, mu + h) - relative_variation(ref, mu - h)) / (2 * h);
    CHECK(d < 0.0);
  }
}

TEST_CASE("average_sigma") {
  VariationFit constant;
  constant.coefficients = {0.3};
  constant.mu_max = 9.0;
  CHECK(average_sigma(constant) == doctest::Approx(0.3).epsilon(1e-14));

  VariationFit linear;
  linear.coefficients = {0.0, 1.0};
  linear.mu_min = 0.0;
  linear.mu_max = 1.0;
  linear.sigma_floor = 0.0;
  CHECK(average_sigma(linear) == doctest::Approx(0.5).epsilon(1e-14));

  // Independent trapezoid over 351 nodes using direct power sums, and the
  // exact integral mean for comparison.
  const auto ref = reference_cubic_fit();
  long double trap = 0.0L;
  const long double h = 35.0L / 350.0L;
  for (int i = 0; i <= 350; ++i) {
    const long double x = h * i;
    const long double f = 0.0258L + 0.788L * x - 0.0214L * x * x + 2.1e-4L * x * x * x;
    trap += (i == 0 || i == 350) ? f / 2 : f;
  }
  const double oracle = static_cast<double>(trap * h / 35.0L);
  const double exact = 0.0258 + 0.788 * 35.0 / 2 - 0.0214 * 35.0 * 35.0 / 3 + 2.1e-4 * std::pow(35.0, 3) / 4;
  CHECK(average_sigma(ref) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(exact == doctest::Approx(7.3284042).epsilon(1e-7));
  CHECK(std::abs(average_sigma(ref) - exact) < 1e-3);
  CHECK_THROWS(average_sigma(ref, 1));
}

TEST_CASE("scaled and reference fits") {
  const auto ref = reference_cubic_fit();
  CHECK(ref.degree() == 3);
  CHECK(ref.device_label == "W1xL1");
  const auto twice = scaled(ref, 2.0);
  for (double mu = 0.0; mu <= 35.0; mu += 5.0) CHECK(eval_sigma(twice, mu) == doctest::Approx(2 * eval_sigma(ref, mu)));
  CHECK_NOTHROW(ref.validate());
  VariationFit bad = ref;
  bad.mu_max = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
