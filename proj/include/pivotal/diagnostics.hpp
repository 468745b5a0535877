#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "pivotal/conformal.hpp"
#include "pivotal/density.hpp"
#include "pivotal/pit.hpp"
#include "pivotal/random.hpp"
#include "pivotal/scores.hpp"

namespace pivotal {

using Function1d = std::function<double(double)>;

std::vector<double> linspace(double lo, double hi, std::size_t count);

/// sup_t |F(t) - G(t)| over `grid`, refined by midpoint insertion until the
/// maximum moves by less than `tolerance` or the grid reaches `max_points`.
double ks_distance_functions(const Function1d& F, const Function1d& G,
                             std::span<const double> grid, double tolerance = 1e-4,
                             std::size_t max_points = std::size_t{1} << 16);

/// One-sample statistic sup_t |ECDF(t) - t|, evaluated exactly at the jumps.
double ks_distance_sample_vs_uniform(std::span<const double> samples);

/// Asymptotic Kolmogorov critical value with Stephens' finite-n correction.
/// Tabulated levels: 0.1, 0.05, 0.01, 0.001.
double ks_critical_value(std::size_t n, double level);
bool ks_uniform_test_passes(std::span<const double> samples, double level);

/// Maps a feature vector to a bin id in [0, bin_count()).
class Binning {
 public:
  virtual ~Binning() = default;
  virtual std::size_t bin_count() const noexcept = 0;
  virtual std::size_t assign(std::span<const double> x) const = 0;
};

/// Lloyd k-means on z-scored coordinates; nearest-center ties go to the lowest index.
class KmeansModel final : public Binning {
 public:
  std::size_t bin_count() const noexcept override { return centers_.size(); }
  std::size_t assign(std::span<const double> x) const override;

  /// Centers in the original feature units.
  std::vector<std::vector<double>> centers() const;
  double inertia() const noexcept { return inertia_; }
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  friend KmeansModel kmeans_fit(const std::vector<std::vector<double>>&, std::size_t,
                                std::uint64_t);
  std::vector<double> mean_;
  std::vector<double> scale_;
  std::vector<std::vector<double>> centers_;  // standardized units
  double inertia_ = 0.0;
  std::size_t iterations_ = 0;
};

/// k-means++ seeding then Lloyd iterations to an assignment fixpoint (at most 100).
KmeansModel kmeans_fit(const std::vector<std::vector<double>>& points, std::size_t k,
                       std::uint64_t seed);
KmeansModel kmeans_fit(const Dataset& data, std::size_t k, std::uint64_t seed);

/// Equal-width bins on one feature coordinate; values outside clamp to the end bins.
class UniformBins final : public Binning {
 public:
  UniformBins(double lo, double hi, std::size_t bins, std::size_t coordinate = 0);
  std::size_t bin_count() const noexcept override { return bins_; }
  std::size_t assign(std::span<const double> x) const override;

 private:
  double lo_;
  double hi_;
  std::size_t bins_;
  std::size_t coordinate_;
};

std::vector<std::size_t> assign_bins(const Binning& bins, const Dataset& data);

struct BinCoverage {
  std::size_t bin = 0;
  std::size_t count = 0;
  double coverage = 0.0;
};

struct GapReport {
  double alpha = 0.0;
  double overall = 0.0;
  /// max - min bin coverage.
  double gap = 0.0;
  /// Count-weighted mean of |bin coverage - overall coverage|.
  double mae = 0.0;
  std::vector<BinCoverage> bins;
};

/// Builds the summary from per-bin counts and coverages.
GapReport summarize_bins(std::vector<BinCoverage> bins, double alpha);

/// Whether test point `index` lies in the region at level alpha.
using Membership = std::function<bool(std::size_t index, double alpha)>;

/// Membership from precomputed test scores and a per-alpha threshold.
Membership membership_from_scores(std::vector<double> scores,
                                  std::function<Threshold(double)> threshold);

GapReport conditional_gap_mae(const Membership& contains, std::span<const std::size_t> bin_of,
                              std::size_t bin_count, double alpha);
GapReport conditional_gap_mae(const Membership& contains, const Dataset& test,
                              const Binning& bins, double alpha);

/// Per bin the largest |bin coverage - overall coverage| over the grid,
/// then the count-weighted mean over bins.
double l1_gap_over_grid(const Membership& contains, std::span<const std::size_t> bin_of,
                        std::size_t bin_count, std::span<const double> alphas);
double l1_gap_over_grid(const Membership& contains, const Dataset& test, const Binning& bins,
                        std::span<const double> alphas);

/// {k / 99 : k = 1..98}.
std::vector<double> uniform_alpha_grid(std::size_t levels = 98);

/// Integral of p log(p / q) over [lo, hi] by adaptive trapezoid refinement;
/// +infinity once q vanishes where p does not.
double forward_kl_1d(const Function1d& p, const Function1d& q, double lo, double hi,
                     double tolerance = 1e-4);

struct SamplingDensity {
  std::function<double(CounterRng&)> sample;
  Function1d density;
};

struct VolumeEstimate {
  double volume = 0.0;
  double standard_error = 0.0;
  std::size_t samples = 0;
};

/// Monte-Carlo volume of {y : p(y) >= tau} as E_p[1{p >= tau} / p].
VolumeEstimate hpd_volume_mc(const SamplingDensity& density, double tau, std::size_t samples,
                             std::uint64_t seed);

struct InclusionResult {
  double violation_rate = 0.0;
  double standard_error = 0.0;
  std::size_t resamples = 0;
  /// The margin L(x, n, delta) per test point.
  std::vector<double> margins;
};

/// Redraws the calibration set `resamples` times and checks, at every test x,
/// that the effective base threshold lies between the oracle quantiles at
/// levels 1 - alpha -+ L(x, n, delta), truncated to [0, 1].
/// `ks_terms[i]` is d_KS between the conditional and marginal laws of the
/// corrected score at test_xs[i] (zero for an exact model).
InclusionResult oracle_inclusion_check(const SampleDraw& draw,
                                       std::shared_ptr<const PitCorrectedScore> score,
                                       const ConditionalScoreModel& oracle,
                                       const std::vector<std::vector<double>>& test_xs,
                                       std::span<const double> ks_terms, std::size_t n,
                                       double alpha, double delta, std::size_t resamples,
                                       std::uint64_t seed);

struct ConditionalGapEstimate {
  double x = 0.0;
  /// max over the grid of |E F_{S|x}(q) - E F_S(q)|.
  double gap = 0.0;
  double standard_error = 0.0;
  double alpha_at_max = 0.0;
};

/// Monte-Carlo conditional coverage gap of a fixed score at scalar feature
/// values. Coverage at x is averaged in closed form per trial: each trial
/// calibrates on n fresh draws and records F_{S|x}(q) - F_S(q).
std::vector<ConditionalGapEstimate> conditional_gap_mc(
    const SampleDraw& draw, const NonconformityScore& score,
    const std::function<double(double x, double t)>& conditional_cdf,
    const Function1d& marginal_cdf, std::span<const double> xs, std::size_t n,
    std::span<const double> alphas, std::size_t trials, std::uint64_t seed);

nlohmann::json to_json(const GapReport& report);
/// Long format: alpha,bin,count,coverage,overall,gap,mae.
void write_gap_csv(std::ostream& out, std::span<const GapReport> reports);

}  // namespace pivotal
