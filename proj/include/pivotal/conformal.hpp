#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "pivotal/random.hpp"
#include "pivotal/scores.hpp"

namespace pivotal {

/// Calibrated score threshold: a finite value or the explicit +infinity
/// sentinel produced when the conformal rank exceeds n.
class Threshold {
 public:
  static Threshold finite(double value);
  static Threshold unbounded() noexcept { return Threshold(); }

  bool is_unbounded() const noexcept { return unbounded_; }
  /// Throws when unbounded.
  double value() const;
  /// Closed sublevel rule: score <= threshold.
  bool admits(double score) const noexcept { return unbounded_ || score <= value_; }

  friend bool operator==(const Threshold&, const Threshold&) = default;
  /// Total order with the sentinel above every finite value.
  friend bool operator<(const Threshold& a, const Threshold& b) noexcept {
    if (a.unbounded_) return false;
    return b.unbounded_ || a.value_ < b.value_;
  }
  friend bool operator<=(const Threshold& a, const Threshold& b) noexcept { return !(b < a); }

 private:
  Threshold() = default;
  bool unbounded_ = true;
  double value_ = 0.0;
};

/// k = ceil((n + 1)(1 - alpha)); k > n selects the sentinel.
std::size_t conformal_rank(std::size_t n, double alpha);

/// k-th smallest of scores with +infinity appended.
Threshold calibrate(std::span<const double> scores, double alpha);

/// Sorted calibration scores. Exact ties are broken once at construction by
/// a seeded jitter of relative size 1e-12 (logged), so the empirical quantile
/// rule sees continuous scores.
class ConformalCalibrator {
 public:
  explicit ConformalCalibrator(std::vector<double> scores, std::uint64_t tie_seed = 0);

  Threshold threshold(double alpha) const;
  std::span<const double> sorted_scores() const noexcept { return sorted_; }
  std::size_t size() const noexcept { return sorted_.size(); }
  bool jittered() const noexcept { return jittered_; }

 private:
  std::vector<double> sorted_;
  bool jittered_ = false;
};

struct PredictionRegion {
  std::shared_ptr<const NonconformityScore> score;
  Threshold threshold = Threshold::unbounded();
  double alpha = 0.0;
};

bool region_contains(const PredictionRegion& region, std::span<const double> x,
                     std::span<const double> y);

/// {y : score(x, y) <= threshold} as disjoint intervals (d = 1).
std::vector<Interval> interval_from_threshold(const PredictionRegion& region,
                                              std::span<const double> x);

/// Base split conformal predictor: one score, one calibration set, regions
/// for any alpha from the stored sorted scores.
class SplitConformal {
 public:
  SplitConformal(std::shared_ptr<const NonconformityScore> score, const Dataset& calibration,
                 std::uint64_t tie_seed = 0);
  SplitConformal(std::shared_ptr<const NonconformityScore> score,
                 ConformalCalibrator calibrator);

  Threshold threshold(double alpha) const { return calibrator_.threshold(alpha); }
  PredictionRegion region(double alpha) const;
  const ConformalCalibrator& calibrator() const noexcept { return calibrator_; }
  const std::shared_ptr<const NonconformityScore>& score() const noexcept { return score_; }

 private:
  std::shared_ptr<const NonconformityScore> score_;
  ConformalCalibrator calibrator_;
};

struct CoverageEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t repetitions = 0;
};

using SampleDraw = std::function<LabeledSample(CounterRng&)>;

/// Monte-Carlo marginal coverage: each repetition draws a fresh calibration
/// set of size n and one test point from its own counter stream, calibrates
/// and records membership. Parallel and sequential runs agree bit for bit.
CoverageEstimate marginal_coverage_trial(const SampleDraw& draw, const NonconformityScore& score,
                                         std::size_t n, double alpha, std::size_t repetitions,
                                         std::uint64_t seed);

/// Same draws evaluated at several levels at once; entry a matches a call
/// of marginal_coverage_trial with alphas[a].
std::vector<CoverageEstimate> marginal_coverage_sweep(const SampleDraw& draw,
                                                     const NonconformityScore& score,
                                                     std::size_t n, std::span<const double> alphas,
                                                     std::size_t repetitions, std::uint64_t seed);

}  // namespace pivotal
