#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pivotal/diagnostics.hpp"
#include "pivotal/error.hpp"
#include "pivotal/normal.hpp"
#include "pivotal/pit.hpp"
#include "pivotal/synth.hpp"

using namespace pivotal;

namespace {

double laplace_conditional(double x, double t) { return t <= 0 ? 0.0 : 1.0 - std::exp(-(x + 1) * t); }

double laplace_marginal(double t) {
  return synth::oracle_marginal_cdf(synth::DgpKind::laplace_het, t);
}

std::vector<std::size_t> equal_bins(std::size_t per_bin, std::size_t bins) {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < bins; ++b) out.insert(out.end(), per_bin, b);
  return out;
}

}  // namespace

TEST_CASE("ks_distance_functions examples") {
  const auto grid = linspace(0.0, 10.0, 101);
  const auto f = [](double t) { return 1 - std::exp(-t); };
  CHECK(ks_distance_functions(f, f, grid) == 0.0);
  const double d = ks_distance_functions(f, [](double t) { return 1 - std::exp(-2 * t); }, grid);
  CHECK(std::abs(d - 0.25) < 1e-4);
}

TEST_CASE("Laplace process KS distances match the fine-grid oracle") {
  const std::pair<double, double> cases[] = {
      {0.0, 0.14011587127936231}, {0.5, 0.01025522992963257}, {1.0, 0.11152639938046494}};
  for (const auto& [x, expected] : cases) {
    const double d = ks_distance_functions([x](double t) { return laplace_conditional(x, t); },
                                           laplace_marginal, linspace(0.0, 10.0, 101));
    CHECK(std::abs(d - expected) < 1e-4);
  }
}

TEST_CASE("ks_distance_sample_vs_uniform examples") {
  CHECK(ks_distance_sample_vs_uniform(std::vector<double>{0.25, 0.75}) == 0.25);
  std::vector<double> lattice;
  for (int i = 1; i <= 9; ++i) lattice.push_back(i / 10.0);
  CHECK(ks_distance_sample_vs_uniform(lattice) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(ks_distance_sample_vs_uniform(std::vector<double>{0.5}) == 0.5);
  CHECK_THROWS_AS(ks_distance_sample_vs_uniform(std::vector<double>{}), Error);
}

TEST_CASE("jump-point KS equals a dense-grid evaluation") {
  CounterRng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> s(1 + rng.below(6));
    for (auto& v : s) v = rng.uniform();
    double brute = 0;
    for (double t : linspace(0.0, 1.0, 200001)) {
      double below = 0, at_or_below = 0;
      for (double v : s) {
        below += v < t;
        at_or_below += v <= t;
      }
      const double n = static_cast<double>(s.size());
      brute = std::max({brute, std::abs(at_or_below / n - t), std::abs(below / n - t)});
    }
    CHECK(std::abs(ks_distance_sample_vs_uniform(s) - brute) < 1e-5 + 1e-9);
  }
}

TEST_CASE("ks critical values") {
  CHECK(ks_critical_value(2000, 0.01) == doctest::Approx(1.6276 / (std::sqrt(2000.0) + 0.12 + 0.11 / std::sqrt(2000.0))));
  CHECK_THROWS_AS(ks_critical_value(100, 0.2), Error);
}

TEST_CASE("gap and MAE examples") {
  std::vector<BinCoverage> bins = {{0, 100, 0.8}, {1, 100, 0.9}, {2, 100, 0.95}};
  const auto report = summarize_bins(bins, 0.1);
  CHECK(report.gap == doctest::Approx(0.15));
  CHECK(report.overall == doctest::Approx(0.88333333333333333));
  CHECK(report.mae == doctest::Approx((0.0833333333 + 0.0166666667 + 0.0666666667) / 3).epsilon(1e-8));

  const auto bin_of = equal_bins(10, 3);
  const auto flat = conditional_gap_mae([](std::size_t i, double) { return i % 2 == 0; }, bin_of, 3, 0.5);
  CHECK(flat.gap == 0.0);
  CHECK(flat.mae == 0.0);

  const std::vector<std::size_t> missing = {0, 0, 2};
  try {
    conditional_gap_mae([](std::size_t, double) { return true; }, missing, 3, 0.1);
    FAIL("expected an empty bin error");
  } catch (const Error& e) {
    REQUIRE(e.index().has_value());
    CHECK(*e.index() == 1);
  }
}

TEST_CASE("gap is invariant under bin relabeling") {
  CounterRng rng(5);
  std::vector<std::size_t> bin_of(400);
  std::vector<bool> inside(400);
  for (std::size_t i = 0; i < 400; ++i) {
    bin_of[i] = i % 7;
    inside[i] = rng.uniform() < 0.3 + 0.05 * static_cast<double>(i % 7);
  }
  auto relabeled = bin_of;
  for (auto& b : relabeled) b = (b * 3 + 2) % 7;
  const Membership m = [&](std::size_t i, double) { return static_cast<bool>(inside[i]); };
  const auto a = conditional_gap_mae(m, bin_of, 7, 0.2);
  const auto b = conditional_gap_mae(m, relabeled, 7, 0.2);
  CHECK(a.gap == doctest::Approx(b.gap).epsilon(1e-15));
  CHECK(a.mae == doctest::Approx(b.mae).epsilon(1e-15));
}

TEST_CASE("l1 gap examples") {
  CounterRng rng(6);
  const auto bin_of = equal_bins(50, 4);
  std::vector<double> u(200);
  for (auto& v : u) v = rng.uniform();
  const Membership m = [&](std::size_t i, double a) { return u[i] <= 1 - a; };
  const std::vector<double> one = {0.3};
  CHECK(l1_gap_over_grid(m, bin_of, 4, one) ==
        doctest::Approx(conditional_gap_mae(m, bin_of, 4, 0.3).mae).epsilon(1e-15));

  const auto grid = uniform_alpha_grid();
  REQUIRE(grid.size() == 98);
  CHECK(grid.front() == doctest::Approx(1.0 / 99));
  CHECK(grid.back() == doctest::Approx(98.0 / 99));
}

TEST_CASE("l1 gap of pivotal scores stays within the null band") {
  const auto bin_of = equal_bins(500, 10);
  CounterRng rng(7);
  std::vector<double> u(5000);
  for (auto& v : u) v = rng.uniform();
  const double gap = l1_gap_over_grid([&](std::size_t i, double a) { return u[i] <= 1 - a; },
                                      bin_of, 10, uniform_alpha_grid());
  CHECK(gap < 0.08);
}

TEST_CASE("kmeans examples") {
  const std::vector<std::vector<double>> pts = {{0.0}, {0.1}, {0.9}, {1.0}};
  const auto km = kmeans_fit(pts, 2, 3);
  auto centers = km.centers();
  std::ranges::sort(centers);
  CHECK(centers[0][0] == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(centers[1][0] == doctest::Approx(0.95).epsilon(1e-12));

  const auto full = kmeans_fit(pts, 4, 3);
  CHECK(full.inertia() == doctest::Approx(0.0));

  const std::vector<std::vector<double>> dup = {{1.0}, {1.0}, {2.0}};
  CHECK_THROWS_AS(kmeans_fit(dup, 3, 1), Error);
  CHECK_THROWS_AS(kmeans_fit(pts, 1, 1), Error);

  const Dataset data = synth::sample({synth::DgpKind::candy_gaussian, 2}, 500, 3, Role::test);
  const auto a = assign_bins(kmeans_fit(data, 10, 9), data);
  const auto b = assign_bins(kmeans_fit(data, 10, 9), data);
  CHECK(a == b);
}

TEST_CASE("forward KL examples") {
  const auto n0 = [](double t) { return normal_pdf(t); };
  CHECK(std::abs(forward_kl_1d(n0, n0, -12, 12)) < 1e-6);
  CHECK(std::abs(forward_kl_1d(n0, [](double t) { return normal_pdf(t - 1); }, -12, 13) - 0.5) < 1e-3);
  const auto e1 = [](double t) { return std::exp(-t); };
  const auto e2 = [](double t) { return 2 * std::exp(-2 * t); };
  CHECK(std::abs(forward_kl_1d(e1, e2, 0, 40) - 0.3068528194400547) < 1e-3);
  CHECK_THROWS_AS(forward_kl_1d([](double) { return -0.5; }, n0, 0, 1), Error);
  CHECK(std::isinf(forward_kl_1d(n0, [](double t) { return t > 0 ? 2 * normal_pdf(t) : 0.0; }, -5, 5)));
}

TEST_CASE("forward KL is nonnegative on random model pairs") {
  CounterRng rng(12);
  for (int i = 0; i < 100; ++i) {
    const double m1 = rng.uniform(-2, 2), s1 = rng.uniform(0.3, 2);
    const double m2 = rng.uniform(-2, 2), s2 = rng.uniform(0.3, 2);
    const double w = rng.uniform(0.1, 0.9);
    const auto p = [=](double t) { return normal_pdf((t - m1) / s1) / s1; };
    const auto q = [=](double t) {
      return w * normal_pdf((t - m2) / s2) / s2 + (1 - w) * normal_pdf((t - m1) / s1) / s1;
    };
    CHECK(forward_kl_1d(p, q, -20, 20) >= 0.0);
  }
}

TEST_CASE("hpd volume examples") {
  const SamplingDensity normal{[](CounterRng& r) { return r.normal(); },
                               [](double t) { return normal_pdf(t); }};
  const auto v = hpd_volume_mc(normal, normal_pdf(1.96), 10000, 3);
  CHECK(std::abs(v.volume - 3.92) < 3 * v.standard_error);
  CHECK(hpd_volume_mc(normal, 1.0, 1000, 3).volume == 0.0);
  const SamplingDensity unit{[](CounterRng& r) { return r.uniform(); },
                             [](double t) { return t >= 0 && t <= 1 ? 1.0 : 0.0; }};
  CHECK(hpd_volume_mc(unit, 1e-9, 1000, 3).volume == doctest::Approx(1.0));
  CHECK_THROWS_AS(hpd_volume_mc(SamplingDensity{}, 0.1, 10, 1), Error);
}

TEST_CASE("oracle inclusion check") {
  const auto kind = synth::DgpKind::laplace_het;
  auto base = std::make_shared<const ScoreFunction>(ScoreFunction::absolute_residual());
  auto oracle = std::make_shared<const OracleModel>(synth::oracle_model(kind, ScoreKind::absolute_residual));
  auto score = std::make_shared<const PitCorrectedScore>(base, oracle);
  const std::vector<std::vector<double>> xs = {{0.0}, {0.5}, {1.0}};
  const std::vector<double> zero(3, 0.0);
  const double delta = 0.1;
  const auto r = oracle_inclusion_check(synth::sampler(kind), score, *oracle, xs, zero, 200, 0.2,
                                        delta, 500, 4);
  CHECK(r.violation_rate <= delta + 3 * std::sqrt(delta * (1 - delta) / 500));
  const double expected_margin = std::sqrt(std::log(2 / delta) / 400) + 2.0 / 200;
  CHECK(r.margins[0] == doctest::Approx(expected_margin));

  const auto tiny = oracle_inclusion_check(synth::sampler(kind), score, *oracle, xs, zero, 2, 0.2,
                                           delta, 100, 4);
  CHECK(tiny.violation_rate == 0.0);
}

TEST_CASE("coverage gap stays under the KS distance on the Laplace process") {
  const auto kind = synth::DgpKind::laplace_het;
  const std::vector<double> xs = {0.0, 0.5, 1.0};
  const auto est = conditional_gap_mc(synth::sampler(kind), ScoreFunction::absolute_residual(),
                                      laplace_conditional, laplace_marginal, xs, 99,
                                      uniform_alpha_grid(), 2000, 5);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double d = ks_distance_functions([&](double t) { return laplace_conditional(xs[i], t); },
                                           laplace_marginal, linspace(0.0, 10.0, 101));
    CHECK(est[i].gap <= d + 3 * est[i].standard_error);
    CHECK(est[i].gap >= 0.0);
  }
}
