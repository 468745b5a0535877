#include <doctest.h>

#include <cmath>

#include "pivotal/conformal.hpp"
#include "pivotal/error.hpp"
#include "pivotal/synth.hpp"

using namespace pivotal;

TEST_CASE("calibrate examples") {
  const std::vector<double> s = {1, 2, 3, 4};
  CHECK(conformal_rank(4, 0.5) == 3);
  CHECK(calibrate(s, 0.5).value() == 3.0);
  CHECK(calibrate(s, 0.1).is_unbounded());
  const std::vector<double> one = {5};
  CHECK(calibrate(one, 0.6).value() == 5.0);
  CHECK_THROWS_AS(calibrate(s, 0.0), Error);
  CHECK_THROWS_AS(calibrate(s, 1.0), Error);
  CHECK_THROWS_AS(calibrate(std::vector<double>{}, 0.5), Error);
  CHECK_THROWS_AS(Threshold::unbounded().value(), Error);
}

TEST_CASE("conformal rank is exact at representable levels") {
  CHECK(conformal_rank(99, 0.1) == 90);
  CHECK(conformal_rank(999, 0.1) == 900);
  CHECK(conformal_rank(9, 0.3) == 7);
  CHECK(conformal_rank(1, 0.4) == 2);
}

TEST_CASE("region_contains examples") {
  auto score = std::make_shared<const ScoreFunction>(ScoreFunction::absolute_residual());
  const double x[] = {0.0};
  const double inner[] = {0.5};
  const double outer[] = {-1.5};
  PredictionRegion region{score, Threshold::finite(1.0), 0.1};
  CHECK(region_contains(region, x, inner));
  CHECK_FALSE(region_contains(region, x, outer));
  region.threshold = Threshold::unbounded();
  const double far[] = {1e300};
  CHECK(region_contains(region, x, far));
}

TEST_CASE("threshold ordering keeps the sentinel on top") {
  CHECK(Threshold::finite(1e300) < Threshold::unbounded());
  CHECK_FALSE(Threshold::unbounded() < Threshold::finite(0));
  CHECK(Threshold::unbounded() == Threshold::unbounded());
}

TEST_CASE("nesting and permutation invariance") {
  CounterRng rng(3);
  std::vector<double> scores(57);
  for (auto& v : scores) v = rng.normal();
  ConformalCalibrator cal(scores);
  for (int a = 1; a < 99; ++a) {
    CHECK(cal.threshold((a + 1) / 100.0) <= cal.threshold(a / 100.0));
  }
  auto shuffled = scores;
  shuffle(shuffled, rng);
  for (double alpha : {0.05, 0.1, 0.33, 0.5, 0.9}) {
    CHECK(calibrate(scores, alpha) == calibrate(shuffled, alpha));
  }
}

TEST_CASE("ties are broken once and logged") {
  ConformalCalibrator cal({1.0, 1.0, 1.0, 2.0}, 5);
  CHECK(cal.jittered());
  const auto sorted = cal.sorted_scores();
  CHECK(sorted[0] < sorted[1]);
  CHECK(sorted[1] < sorted[2]);
  CHECK(std::abs(sorted[2] - 1.0) < 1e-11);
  ConformalCalibrator distinct({0.1, 0.2});
  CHECK_FALSE(distinct.jittered());
}

TEST_CASE("interval_from_threshold") {
  auto score = std::make_shared<const ScoreFunction>(ScoreFunction::absolute_residual());
  const double x[] = {0.0};
  auto iv = interval_from_threshold({score, Threshold::finite(2.0), 0.1}, x);
  REQUIRE(iv.size() == 1);
  CHECK(iv[0].lo == -2.0);
  CHECK(iv[0].hi == 2.0);
  auto whole = interval_from_threshold({score, Threshold::unbounded(), 0.1}, x);
  REQUIRE(whole.size() == 1);
  CHECK(std::isinf(whole[0].lo));
}

TEST_CASE("marginal coverage examples") {
  const auto draw = synth::sampler(synth::DgpKind::candy_gaussian);
  const auto score = ScoreFunction::absolute_residual();
  const auto est = marginal_coverage_trial(draw, score, 99, 0.1, 2000, 17);
  const double band = 3.0 * std::sqrt(0.1 * 0.9 / 2000);
  CHECK(est.mean >= 0.900 - band);
  CHECK(est.mean <= 0.910 + band);

  CHECK(marginal_coverage_trial(draw, score, 1, 0.4, 200, 1).mean == 1.0);
  CHECK(marginal_coverage_trial(draw, score, 5, 0.01, 200, 1).mean == 1.0);
}

TEST_CASE("marginal sweep matches single-level trials") {
  const auto draw = synth::sampler(synth::DgpKind::laplace_het);
  const auto score = ScoreFunction::absolute_residual();
  const std::vector<double> alphas = {0.1, 0.25};
  const auto sweep = marginal_coverage_sweep(draw, score, 19, alphas, 300, 9);
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    const auto single = marginal_coverage_trial(draw, score, 19, alphas[a], 300, 9);
    CHECK(sweep[a].mean == single.mean);
    CHECK(sweep[a].standard_error == single.standard_error);
  }
}

TEST_CASE("composition invariance on random instances") {
  CounterRng rng(2024);
  const std::function<double(double)> maps[] = {
      [](double t) { return 2.0 * t + 1.0; },
      [](double t) { return t * t * t; },
      [](double t) { return std::exp(t); },
  };
  std::size_t disagreements = 0;
  for (int instance = 0; instance < 1000; ++instance) {
    const std::size_t n = 1 + rng.below(60);
    std::vector<double> cal(n);
    for (auto& v : cal) v = rng.normal();
    const double test = rng.normal();
    const double alpha = rng.uniform(0.01, 0.99);
    const bool base = calibrate(cal, alpha).admits(test);
    for (const auto& g : maps) {
      std::vector<double> mapped(n);
      for (std::size_t i = 0; i < n; ++i) mapped[i] = g(cal[i]);
      if (calibrate(mapped, alpha).admits(g(test)) != base) ++disagreements;
    }
  }
  CHECK(disagreements == 0);
}
