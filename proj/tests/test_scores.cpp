#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "pivotal/error.hpp"
#include "pivotal/random.hpp"
#include "pivotal/scores.hpp"

using namespace pivotal;

namespace {

Dataset numbered(std::size_t n) {
  std::vector<LabeledSample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    samples.push_back({{static_cast<double>(i)}, {0.5 * static_cast<double>(i)}});
  }
  return Dataset(std::move(samples), Role::train);
}

std::vector<double> first_features(const Dataset& d) {
  std::vector<double> out;
  for (const auto& s : d) out.push_back(s.features[0]);
  return out;
}

}  // namespace

TEST_CASE("evaluate_score examples") {
  const double x[] = {0.3};
  const double zero[] = {0.0};
  CHECK(evaluate_score(ScoreFunction::absolute_residual(), x, zero) == 0.0);
  const double neg[] = {-1.3};
  CHECK(evaluate_score(ScoreFunction::raw_response(), x, neg) == -1.3);

  const auto linf = ScoreFunction::scaled_linf_residual(
      [](std::span<const double>) { return std::vector<double>{0.0, 0.0}; }, {1.0, 2.0});
  const double y2[] = {1.0, -4.0};
  CHECK(evaluate_score(linf, x, y2) == 2.0);
}

TEST_CASE("score validation errors") {
  const double x[] = {0.0};
  const double y2[] = {1.0, 2.0};
  CHECK_THROWS_AS(evaluate_score(ScoreFunction::absolute_residual(), x, y2), Error);
  CHECK_THROWS_AS(ScoreFunction::scaled_linf_residual(
                      [](std::span<const double>) { return std::vector<double>{0.0}; }, {0.0}),
                  Error);
  const double bad[] = {std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(evaluate_score(ScoreFunction::raw_response(), x, bad), Error);
}

TEST_CASE("scores are pure and the linf score is sign symmetric") {
  const auto f = [](std::span<const double> x) { return std::vector<double>{0.0 * x[0], 0.0}; };
  const auto linf = ScoreFunction::scaled_linf_residual(f, {0.5, 3.0});
  CounterRng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const double x[] = {rng.uniform(-2, 2)};
    const double r0 = rng.normal(), r1 = rng.normal();
    const double up[] = {r0, r1};
    const double down[] = {-r0, -r1};
    const double a = linf.evaluate(x, up);
    CHECK(a == linf.evaluate(x, up));
    CHECK(a == linf.evaluate(x, down));
  }
}

TEST_CASE("split_dataset sizes and determinism") {
  auto s = split_dataset(numbered(10), {0.5, 0.3, 0.2}, 7);
  CHECK(s.train.size() == 5);
  CHECK(s.calibration.size() == 3);
  CHECK(s.test.size() == 2);
  CHECK(s.calibration.role() == Role::calibration);

  auto t = split_dataset(numbered(7), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1);
  CHECK(t.train.size() == 3);
  CHECK(t.calibration.size() == 2);
  CHECK(t.test.size() == 2);

  auto again = split_dataset(numbered(10), {0.5, 0.3, 0.2}, 7);
  CHECK(first_features(again.train) == first_features(s.train));
  CHECK(first_features(again.test) == first_features(s.test));

  CHECK_THROWS_AS(split_dataset(numbered(2), {0.5, 0.3, 0.2}, 1), Error);
  CHECK_THROWS_AS(split_dataset(numbered(10), {0.5, 0.3, 0.3}, 1), Error);
}

TEST_CASE("split_dataset is a partition") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = split_dataset(numbered(53), {0.6, 0.25, 0.15}, seed);
    std::vector<double> all;
    for (const auto* part : {&s.train, &s.calibration, &s.test}) {
      const auto f = first_features(*part);
      all.insert(all.end(), f.begin(), f.end());
    }
    std::ranges::sort(all);
    CHECK(all == first_features(numbered(53)));
  }
}

TEST_CASE("csv round trip") {
  const Dataset d = numbered(4);
  std::stringstream buffer;
  write_csv(buffer, d);
  CHECK(buffer.str().rfind("x_0,y_0\n", 0) == 0);
  const Dataset back = read_csv(buffer, Role::test);
  REQUIRE(back.size() == 4);
  CHECK(back.role() == Role::test);
  CHECK(back[3].outcome[0] == 1.5);
  CHECK(back.fingerprint() == d.fingerprint());
}

TEST_CASE("sublevel sets") {
  const double x[] = {0.0};
  auto abs_set = ScoreFunction::absolute_residual().sublevel_set(x, 2.0);
  REQUIRE(abs_set.size() == 1);
  CHECK(abs_set[0].lo == -2.0);
  CHECK(abs_set[0].hi == 2.0);
  auto raw_set = ScoreFunction::raw_response().sublevel_set(x, 0.7);
  REQUIRE(raw_set.size() == 1);
  CHECK(std::isinf(raw_set[0].lo));
  CHECK(raw_set[0].hi == 0.7);
  CHECK(ScoreFunction::absolute_residual().sublevel_set(x, -1.0).empty());
}
