#include "pivotal/conformal.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "pivotal/error.hpp"
#include "pivotal/log.hpp"
#include "pivotal/parallel.hpp"

namespace pivotal {

Threshold Threshold::finite(double value) {
  PIVOTAL_REQUIRE(std::isfinite(value), ErrorCode::non_finite, "threshold must be finite");
  Threshold t;
  t.unbounded_ = false;
  t.value_ = value;
  return t;
}

double Threshold::value() const {
  PIVOTAL_REQUIRE(!unbounded_, ErrorCode::invalid_argument, "threshold is unbounded");
  return value_;
}

std::size_t conformal_rank(std::size_t n, double alpha) {
  PIVOTAL_REQUIRE(alpha > 0.0 && alpha < 1.0, ErrorCode::invalid_argument,
                  fmt::format("alpha = {} outside (0, 1)", alpha));
  const double level = static_cast<double>(n + 1) * (1.0 - alpha);
  // Products such as 10 * 0.7 round to 7.000000000000001; do not let that bump k.
  return static_cast<std::size_t>(std::ceil(level - 1e-9 * level));
}

namespace {

Threshold order_statistic(std::span<const double> sorted, double alpha) {
  const std::size_t k = conformal_rank(sorted.size(), alpha);
  if (k > sorted.size()) return Threshold::unbounded();
  return Threshold::finite(sorted[std::max<std::size_t>(k, 1) - 1]);
}

}  // namespace

Threshold calibrate(std::span<const double> scores, double alpha) {
  PIVOTAL_REQUIRE(alpha > 0.0 && alpha < 1.0, ErrorCode::invalid_argument,
                  fmt::format("alpha = {} outside (0, 1)", alpha));
  PIVOTAL_REQUIRE(!scores.empty(), ErrorCode::empty_input, "calibrate: no scores");
  for (double s : scores) {
    PIVOTAL_REQUIRE(std::isfinite(s), ErrorCode::non_finite, "calibrate: non-finite score");
  }
  const std::size_t k = conformal_rank(scores.size(), alpha);
  if (k > scores.size()) return Threshold::unbounded();
  std::vector<double> copy(scores.begin(), scores.end());
  const auto kth = copy.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(k, 1) - 1);
  std::nth_element(copy.begin(), kth, copy.end());
  return Threshold::finite(*kth);
}

ConformalCalibrator::ConformalCalibrator(std::vector<double> scores, std::uint64_t tie_seed)
    : sorted_(std::move(scores)) {
  PIVOTAL_REQUIRE(!sorted_.empty(), ErrorCode::empty_input, "calibrator needs at least one score");
  for (std::size_t i = 0; i < sorted_.size(); ++i) {
    if (!std::isfinite(sorted_[i])) {
      throw Error(ErrorCode::non_finite, fmt::format("calibration score {} is not finite", i), i);
    }
  }
  std::ranges::sort(sorted_);
  if (std::ranges::adjacent_find(sorted_) == sorted_.end()) return;

  std::size_t ties = 0;
  for (std::size_t i = 1; i < sorted_.size(); ++i) ties += sorted_[i] == sorted_[i - 1];
  logger().info("calibrator: {} exact score ties among {} scores, applying jitter", ties,
                sorted_.size());
  CounterRng rng(tie_seed, 0x71E5);
  for (double& s : sorted_) {
    s += 1e-12 * std::max(1.0, std::abs(s)) * (2.0 * rng.uniform() - 1.0);
  }
  std::ranges::sort(sorted_);
  jittered_ = true;
}

Threshold ConformalCalibrator::threshold(double alpha) const {
  return order_statistic(sorted_, alpha);
}

bool region_contains(const PredictionRegion& region, std::span<const double> x,
                     std::span<const double> y) {
  if (region.threshold.is_unbounded()) return true;
  return region.threshold.admits(region.score->evaluate(x, y));
}

std::vector<Interval> interval_from_threshold(const PredictionRegion& region,
                                              std::span<const double> x) {
  if (region.threshold.is_unbounded()) return region.score->full_set(x);
  return region.score->sublevel_set(x, region.threshold.value());
}

SplitConformal::SplitConformal(std::shared_ptr<const NonconformityScore> score,
                               const Dataset& calibration, std::uint64_t tie_seed)
    : score_(std::move(score)),
      calibrator_(evaluate_scores(*score_, calibration), tie_seed) {}

SplitConformal::SplitConformal(std::shared_ptr<const NonconformityScore> score,
                               ConformalCalibrator calibrator)
    : score_(std::move(score)), calibrator_(std::move(calibrator)) {}

PredictionRegion SplitConformal::region(double alpha) const {
  return {score_, threshold(alpha), alpha};
}

std::vector<CoverageEstimate> marginal_coverage_sweep(const SampleDraw& draw,
                                                     const NonconformityScore& score,
                                                     std::size_t n, std::span<const double> alphas,
                                                     std::size_t repetitions, std::uint64_t seed) {
  PIVOTAL_REQUIRE(repetitions >= 1, ErrorCode::invalid_argument, "repetitions must be >= 1");
  PIVOTAL_REQUIRE(n >= 1, ErrorCode::invalid_argument, "calibration size must be >= 1");
  PIVOTAL_REQUIRE(!alphas.empty(), ErrorCode::empty_input, "no miscoverage levels given");
  for (double alpha : alphas) conformal_rank(n, alpha);  // validates alpha

  const std::size_t levels = alphas.size();
  std::vector<unsigned char> covered(repetitions * levels, 0);
  parallel_for(repetitions, [&](std::size_t r) {
    CounterRng rng(seed, r);
    std::vector<double> scores(n);
    for (auto& s : scores) {
      const auto sample = draw(rng);
      s = score.evaluate(sample.features, sample.outcome);
    }
    const auto test = draw(rng);
    const double test_score = score.evaluate(test.features, test.outcome);
    const ConformalCalibrator calibrator(std::move(scores), derive_seed(seed, r));
    for (std::size_t a = 0; a < levels; ++a) {
      covered[r * levels + a] = calibrator.threshold(alphas[a]).admits(test_score);
    }
  });

  std::vector<CoverageEstimate> estimates(levels);
  for (std::size_t a = 0; a < levels; ++a) {
    std::size_t hits = 0;
    for (std::size_t r = 0; r < repetitions; ++r) hits += covered[r * levels + a];
    auto& e = estimates[a];
    e.repetitions = repetitions;
    e.mean = static_cast<double>(hits) / static_cast<double>(repetitions);
    e.standard_error = std::sqrt(e.mean * (1.0 - e.mean) / static_cast<double>(repetitions));
  }
  return estimates;
}

CoverageEstimate marginal_coverage_trial(const SampleDraw& draw, const NonconformityScore& score,
                                         std::size_t n, double alpha, std::size_t repetitions,
                                         std::uint64_t seed) {
  const double level[] = {alpha};
  return marginal_coverage_sweep(draw, score, n, level, repetitions, seed).front();
}

}  // namespace pivotal
