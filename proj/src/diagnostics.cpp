#include "pivotal/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include <fmt/format.h>

#include "pivotal/error.hpp"
#include "pivotal/log.hpp"
#include "pivotal/parallel.hpp"

namespace pivotal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) d += (a[j] - b[j]) * (a[j] - b[j]);
  return d;
}

std::size_t nearest(const std::vector<std::vector<double>>& centers, std::span<const double> z,
                    double* distance = nullptr) {
  std::size_t best = 0;
  double best_d = kInf;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = squared_distance(centers[c], z);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (distance) *distance = best_d;
  return best;
}

}  // namespace

std::vector<double> linspace(double lo, double hi, std::size_t count) {
  PIVOTAL_REQUIRE(count >= 1, ErrorCode::invalid_argument, "linspace needs at least one point");
  if (count == 1) return {lo};
  std::vector<double> out(count);
  const double step = (hi - lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) out[i] = lo + step * static_cast<double>(i);
  out.back() = hi;
  return out;
}

double ks_distance_functions(const Function1d& F, const Function1d& G,
                             std::span<const double> grid, double tolerance,
                             std::size_t max_points) {
  PIVOTAL_REQUIRE(!grid.empty(), ErrorCode::empty_input, "KS grid is empty");
  PIVOTAL_REQUIRE(std::ranges::is_sorted(grid), ErrorCode::invalid_argument,
                  "KS grid must be sorted");
  std::vector<double> points(grid.begin(), grid.end());
  const auto sup = [&](std::span<const double> ts) {
    double best = 0.0;
    for (double t : ts) best = std::max(best, std::abs(F(t) - G(t)));
    return best;
  };
  double current = sup(points);
  while (points.size() > 1 && 2 * points.size() - 1 <= max_points) {
    std::vector<double> mids(points.size() - 1);
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
      mids[i] = 0.5 * (points[i] + points[i + 1]);
    }
    const double refined = std::max(current, sup(mids));
    std::vector<double> merged;
    merged.reserve(points.size() + mids.size());
    for (std::size_t i = 0; i < mids.size(); ++i) {
      merged.push_back(points[i]);
      merged.push_back(mids[i]);
    }
    merged.push_back(points.back());
    points = std::move(merged);
    const double change = refined - current;
    current = refined;
    if (change < tolerance) break;
  }
  return current;
}

double ks_distance_sample_vs_uniform(std::span<const double> samples) {
  PIVOTAL_REQUIRE(!samples.empty(), ErrorCode::empty_input, "KS statistic of an empty sample");
  std::vector<double> sorted(samples.begin(), samples.end());
  for (double u : sorted) {
    PIVOTAL_REQUIRE(u >= 0.0 && u <= 1.0, ErrorCode::invalid_argument,
                    fmt::format("sample {} outside [0, 1]", u));
  }
  std::ranges::sort(sorted);
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double above = static_cast<double>(i + 1) / n - sorted[i];
    const double below = sorted[i] - static_cast<double>(i) / n;
    d = std::max({d, above, below});
  }
  return d;
}

double ks_critical_value(std::size_t n, double level) {
  PIVOTAL_REQUIRE(n >= 1, ErrorCode::invalid_argument, "KS critical value needs n >= 1");
  struct Entry {
    double level;
    double value;
  };
  static constexpr Entry table[] = {{0.1, 1.2238}, {0.05, 1.3581}, {0.01, 1.6276}, {0.001, 1.9495}};
  for (const auto& e : table) {
    if (std::abs(e.level - level) < 1e-12) {
      const double root = std::sqrt(static_cast<double>(n));
      return e.value / (root + 0.12 + 0.11 / root);
    }
  }
  throw Error(ErrorCode::unsupported, fmt::format("no tabulated KS critical value at level {}", level));
}

bool ks_uniform_test_passes(std::span<const double> samples, double level) {
  return ks_distance_sample_vs_uniform(samples) <= ks_critical_value(samples.size(), level);
}

// ---------------------------------------------------------------- binning

std::size_t KmeansModel::assign(std::span<const double> x) const {
  PIVOTAL_REQUIRE(x.size() == mean_.size(), ErrorCode::dimension_mismatch,
                  "point dimension differs from the k-means model");
  std::vector<double> z(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - mean_[j]) / scale_[j];
  return nearest(centers_, z);
}

std::vector<std::vector<double>> KmeansModel::centers() const {
  auto out = centers_;
  for (auto& c : out) {
    for (std::size_t j = 0; j < c.size(); ++j) c[j] = mean_[j] + scale_[j] * c[j];
  }
  return out;
}

KmeansModel kmeans_fit(const std::vector<std::vector<double>>& points, std::size_t k,
                       std::uint64_t seed) {
  PIVOTAL_REQUIRE(!points.empty(), ErrorCode::empty_input, "k-means needs points");
  PIVOTAL_REQUIRE(k >= 2, ErrorCode::invalid_argument, "k-means needs K >= 2");
  const std::size_t n = points.size();
  const std::size_t p = points.front().size();
  for (const auto& pt : points) {
    PIVOTAL_REQUIRE(pt.size() == p && p >= 1, ErrorCode::dimension_mismatch,
                    "k-means points differ in dimension");
  }
  const std::set<std::vector<double>> distinct(points.begin(), points.end());
  PIVOTAL_REQUIRE(k <= distinct.size(), ErrorCode::invalid_argument,
                  fmt::format("K = {} exceeds the {} distinct points", k, distinct.size()));

  KmeansModel model;
  model.mean_.assign(p, 0.0);
  model.scale_.assign(p, 1.0);
  for (std::size_t j = 0; j < p; ++j) {
    double mean = 0.0;
    for (const auto& pt : points) mean += pt[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& pt : points) var += (pt[j] - mean) * (pt[j] - mean);
    var /= static_cast<double>(n);
    model.mean_[j] = mean;
    model.scale_[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  std::vector<std::vector<double>> z(n, std::vector<double>(p));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) z[i][j] = (points[i][j] - model.mean_[j]) / model.scale_[j];
  }

  CounterRng rng(seed, 0x6EA7);
  auto& centers = model.centers_;
  centers.push_back(z[static_cast<std::size_t>(rng.below(n))]);
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest(centers, z[i], &d2[i]);
      total += d2[i];
    }
    const double target = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      acc += d2[i];
      pick = i;
      if (acc >= target) break;
    }
    centers.push_back(z[pick]);
  }

  std::vector<std::size_t> assignment(n, k);
  for (std::size_t iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = nearest(centers, z[i]);
      if (c != assignment[i]) {
        assignment[i] = c;
        changed = true;
      }
    }
    model.iterations_ = iter + 1;
    if (!changed) break;
    std::vector<std::vector<double>> sums(k, std::vector<double>(p, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assignment[i]];
      for (std::size_t j = 0; j < p; ++j) sums[assignment[i]][j] += z[i][j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < p; ++j) centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
    }
  }
  model.inertia_ = 0.0;
  for (std::size_t i = 0; i < n; ++i) model.inertia_ += squared_distance(centers[assignment[i]], z[i]);
  return model;
}

KmeansModel kmeans_fit(const Dataset& data, std::size_t k, std::uint64_t seed) {
  std::vector<std::vector<double>> points;
  points.reserve(data.size());
  for (const auto& s : data) points.push_back(s.features);
  return kmeans_fit(points, k, seed);
}

UniformBins::UniformBins(double lo, double hi, std::size_t bins, std::size_t coordinate)
    : lo_(lo), hi_(hi), bins_(bins), coordinate_(coordinate) {
  PIVOTAL_REQUIRE(hi > lo && bins >= 1, ErrorCode::invalid_argument, "invalid uniform bins");
}

std::size_t UniformBins::assign(std::span<const double> x) const {
  PIVOTAL_REQUIRE(coordinate_ < x.size(), ErrorCode::dimension_mismatch,
                  "binning coordinate outside the feature vector");
  const double pos = (x[coordinate_] - lo_) / (hi_ - lo_) * static_cast<double>(bins_);
  if (!(pos > 0.0)) return 0;
  return std::min(bins_ - 1, static_cast<std::size_t>(pos));
}

std::vector<std::size_t> assign_bins(const Binning& bins, const Dataset& data) {
  std::vector<std::size_t> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(bins.assign(s.features));
  return out;
}

// ---------------------------------------------------------------- coverage gaps

GapReport summarize_bins(std::vector<BinCoverage> bins, double alpha) {
  PIVOTAL_REQUIRE(!bins.empty(), ErrorCode::empty_input, "no bins to summarize");
  GapReport report;
  report.alpha = alpha;
  std::size_t total = 0;
  double covered = 0.0;
  double lo = kInf;
  double hi = -kInf;
  for (const auto& b : bins) {
    if (b.count == 0) {
      throw Error(ErrorCode::empty_input, fmt::format("bin {} has no test points", b.bin), b.bin);
    }
    total += b.count;
    covered += b.coverage * static_cast<double>(b.count);
    lo = std::min(lo, b.coverage);
    hi = std::max(hi, b.coverage);
  }
  report.overall = covered / static_cast<double>(total);
  report.gap = hi - lo;
  double mae = 0.0;
  for (const auto& b : bins) mae += static_cast<double>(b.count) * std::abs(b.coverage - report.overall);
  report.mae = mae / static_cast<double>(total);
  report.bins = std::move(bins);
  return report;
}

Membership membership_from_scores(std::vector<double> scores,
                                  std::function<Threshold(double)> threshold) {
  return [scores = std::move(scores), threshold = std::move(threshold)](std::size_t i,
                                                                         double alpha) {
    return threshold(alpha).admits(scores.at(i));
  };
}

GapReport conditional_gap_mae(const Membership& contains, std::span<const std::size_t> bin_of,
                              std::size_t bin_count, double alpha) {
  PIVOTAL_REQUIRE(bin_count >= 1, ErrorCode::invalid_argument, "need at least one bin");
  std::vector<BinCoverage> bins(bin_count);
  std::vector<std::size_t> hits(bin_count, 0);
  for (std::size_t c = 0; c < bin_count; ++c) bins[c].bin = c;
  for (std::size_t i = 0; i < bin_of.size(); ++i) {
    PIVOTAL_REQUIRE(bin_of[i] < bin_count, ErrorCode::invalid_argument, "bin id out of range");
    ++bins[bin_of[i]].count;
    if (contains(i, alpha)) ++hits[bin_of[i]];
  }
  for (std::size_t c = 0; c < bin_count; ++c) {
    if (bins[c].count == 0) {
      throw Error(ErrorCode::empty_input, fmt::format("bin {} has no test points", c), c);
    }
    bins[c].coverage = static_cast<double>(hits[c]) / static_cast<double>(bins[c].count);
  }
  return summarize_bins(std::move(bins), alpha);
}

GapReport conditional_gap_mae(const Membership& contains, const Dataset& test,
                              const Binning& bins, double alpha) {
  const auto bin_of = assign_bins(bins, test);
  return conditional_gap_mae(contains, bin_of, bins.bin_count(), alpha);
}

double l1_gap_over_grid(const Membership& contains, std::span<const std::size_t> bin_of,
                        std::size_t bin_count, std::span<const double> alphas) {
  PIVOTAL_REQUIRE(!alphas.empty(), ErrorCode::empty_input, "empty miscoverage grid");
  std::vector<double> worst(bin_count, 0.0);
  std::vector<std::size_t> counts;
  for (double alpha : alphas) {
    PIVOTAL_REQUIRE(alpha > 0.0 && alpha < 1.0, ErrorCode::invalid_argument,
                    fmt::format("alpha {} outside (0, 1)", alpha));
    const GapReport r = conditional_gap_mae(contains, bin_of, bin_count, alpha);
    counts.clear();
    for (const auto& b : r.bins) {
      worst[b.bin] = std::max(worst[b.bin], std::abs(b.coverage - r.overall));
      counts.push_back(b.count);
    }
  }
  double total = 0.0;
  double weighted = 0.0;
  for (std::size_t c = 0; c < bin_count; ++c) {
    total += static_cast<double>(counts[c]);
    weighted += static_cast<double>(counts[c]) * worst[c];
  }
  return weighted / total;
}

double l1_gap_over_grid(const Membership& contains, const Dataset& test, const Binning& bins,
                        std::span<const double> alphas) {
  const auto bin_of = assign_bins(bins, test);
  return l1_gap_over_grid(contains, bin_of, bins.bin_count(), alphas);
}

std::vector<double> uniform_alpha_grid(std::size_t levels) {
  std::vector<double> out(levels);
  for (std::size_t k = 0; k < levels; ++k) {
    out[k] = static_cast<double>(k + 1) / static_cast<double>(levels + 1);
  }
  return out;
}

// ---------------------------------------------------------------- divergence and volume

namespace {

struct KlIntegrand {
  const Function1d& p;
  const Function1d& q;

  double operator()(double t) const {
    const double pv = p(t);
    const double qv = q(t);
    if (pv < 0.0 || qv < 0.0 || std::isnan(pv) || std::isnan(qv)) {
      throw Error(ErrorCode::numerical, fmt::format("negative or NaN density at {}", t));
    }
    if (pv == 0.0) return 0.0;
    if (qv == 0.0) return kInf;
    return pv * std::log(pv / qv);
  }
};

double adaptive_trapezoid(const KlIntegrand& f, double a, double b, double fa, double fb,
                          double tolerance, int depth) {
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  if (std::isinf(fa) || std::isinf(fm) || std::isinf(fb)) return kInf;
  const double coarse = 0.5 * (b - a) * (fa + fb);
  const double fine = 0.25 * (b - a) * (fa + 2.0 * fm + fb);
  if (depth <= 0 || std::abs(fine - coarse) <= 3.0 * tolerance) {
    return fine + (fine - coarse) / 3.0;
  }
  return adaptive_trapezoid(f, a, m, fa, fm, 0.5 * tolerance, depth - 1) +
         adaptive_trapezoid(f, m, b, fm, fb, 0.5 * tolerance, depth - 1);
}

}  // namespace

double forward_kl_1d(const Function1d& p, const Function1d& q, double lo, double hi,
                     double tolerance) {
  PIVOTAL_REQUIRE(hi > lo && std::isfinite(lo) && std::isfinite(hi), ErrorCode::invalid_argument,
                  "KL support must be a finite interval");
  const KlIntegrand f{p, q};
  constexpr int panels = 64;
  const double width = (hi - lo) / panels;
  double total = 0.0;
  double fa = f(lo);
  for (int i = 0; i < panels; ++i) {
    const double a = lo + width * i;
    const double b = i + 1 == panels ? hi : a + width;
    const double fb = f(b);
    total += adaptive_trapezoid(f, a, b, fa, fb, tolerance / panels, 30);
    fa = fb;
  }
  if (total < 0.0) {
    PIVOTAL_REQUIRE(total > -tolerance, ErrorCode::numerical,
                    fmt::format("forward KL estimate {} is negative", total));
    total = 0.0;
  }
  return total;
}

VolumeEstimate hpd_volume_mc(const SamplingDensity& density, double tau, std::size_t samples,
                             std::uint64_t seed) {
  PIVOTAL_REQUIRE(density.sample && density.density, ErrorCode::unsupported,
                  "density does not provide a sampler");
  PIVOTAL_REQUIRE(tau > 0.0, ErrorCode::invalid_argument, "tau must be positive");
  PIVOTAL_REQUIRE(samples >= 1, ErrorCode::invalid_argument, "need at least one sample");
  CounterRng rng(seed, 0x4BD);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t b = 0; b < samples; ++b) {
    const double y = density.sample(rng);
    const double p = density.density(y);
    const double term = p >= tau ? 1.0 / p : 0.0;
    sum += term;
    sum_sq += term * term;
  }
  const double n = static_cast<double>(samples);
  VolumeEstimate e;
  e.samples = samples;
  e.volume = sum / n;
  const double var = samples > 1 ? std::max(0.0, (sum_sq - n * e.volume * e.volume) / (n - 1.0)) : 0.0;
  e.standard_error = std::sqrt(var / n);
  return e;
}

// ---------------------------------------------------------------- oracle comparisons

InclusionResult oracle_inclusion_check(const SampleDraw& draw,
                                       std::shared_ptr<const PitCorrectedScore> score,
                                       const ConditionalScoreModel& oracle,
                                       const std::vector<std::vector<double>>& test_xs,
                                       std::span<const double> ks_terms, std::size_t n,
                                       double alpha, double delta, std::size_t resamples,
                                       std::uint64_t seed) {
  PIVOTAL_REQUIRE(score, ErrorCode::invalid_argument, "inclusion check needs a corrected score");
  PIVOTAL_REQUIRE(delta > 0.0 && delta < 1.0, ErrorCode::invalid_argument,
                  "delta must lie in (0, 1)");
  PIVOTAL_REQUIRE(ks_terms.empty() || ks_terms.size() == test_xs.size(),
                  ErrorCode::dimension_mismatch, "one KS term per test point");
  PIVOTAL_REQUIRE(resamples >= 1 && n >= 1, ErrorCode::invalid_argument,
                  "need n >= 1 and at least one resample");
  conformal_rank(n, alpha);

  InclusionResult result;
  result.resamples = resamples;
  const double nn = static_cast<double>(n);
  const double common = std::sqrt(std::log(2.0 / delta) / (2.0 * nn)) + 2.0 / nn;
  std::vector<double> lower(test_xs.size());
  std::vector<double> upper(test_xs.size());
  for (std::size_t i = 0; i < test_xs.size(); ++i) {
    const double margin = (ks_terms.empty() ? 0.0 : ks_terms[i]) + common;
    result.margins.push_back(margin);
    const double lo_level = 1.0 - alpha - margin;
    const double hi_level = 1.0 - alpha + margin;
    lower[i] = lo_level <= 0.0 ? -kInf : oracle.inverse_cdf(test_xs[i], std::min(lo_level, 1.0));
    upper[i] = hi_level >= 1.0 ? kInf : oracle.inverse_cdf(test_xs[i], std::max(hi_level, 0.0));
  }

  std::vector<unsigned char> violated(resamples, 0);
  parallel_for(resamples, [&](std::size_t r) {
    CounterRng rng(seed, r);
    std::vector<double> scores(n);
    for (auto& s : scores) {
      const auto sample = draw(rng);
      s = score->evaluate(sample.features, sample.outcome);
    }
    const ConformalCalibrator calibrator(std::move(scores), derive_seed(seed, r));
    const Threshold q = calibrator.threshold(alpha);
    for (std::size_t i = 0; i < test_xs.size(); ++i) {
      const double t = q.is_unbounded() ? kInf : score->base_threshold(test_xs[i], q.value());
      if (t < lower[i] || t > upper[i]) {
        violated[r] = 1;
        break;
      }
    }
  });
  std::size_t count = 0;
  for (auto v : violated) count += v;
  result.violation_rate = static_cast<double>(count) / static_cast<double>(resamples);
  result.standard_error = std::sqrt(result.violation_rate * (1.0 - result.violation_rate) /
                                    static_cast<double>(resamples));
  return result;
}

std::vector<ConditionalGapEstimate> conditional_gap_mc(
    const SampleDraw& draw, const NonconformityScore& score,
    const std::function<double(double x, double t)>& conditional_cdf,
    const Function1d& marginal_cdf, std::span<const double> xs, std::size_t n,
    std::span<const double> alphas, std::size_t trials, std::uint64_t seed) {
  PIVOTAL_REQUIRE(!xs.empty() && !alphas.empty(), ErrorCode::empty_input,
                  "conditional gap needs feature values and levels");
  PIVOTAL_REQUIRE(trials >= 2 && n >= 1, ErrorCode::invalid_argument,
                  "conditional gap needs n >= 1 and at least two trials");
  std::vector<std::size_t> ranks;
  for (double a : alphas) ranks.push_back(conformal_rank(n, a));

  const std::size_t width = xs.size() * alphas.size();
  std::vector<double> diffs(trials * width);
  parallel_for(trials, [&](std::size_t r) {
    CounterRng rng(seed, r);
    std::vector<double> scores(n);
    for (auto& s : scores) {
      const auto sample = draw(rng);
      s = score.evaluate(sample.features, sample.outcome);
    }
    std::ranges::sort(scores);
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      const bool sentinel = ranks[a] > n;
      const double q = sentinel ? kInf : scores[ranks[a] - 1];
      const double marginal = sentinel ? 1.0 : marginal_cdf(q);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double conditional = sentinel ? 1.0 : conditional_cdf(xs[i], q);
        diffs[r * width + i * alphas.size() + a] = conditional - marginal;
      }
    }
  });

  std::vector<ConditionalGapEstimate> out;
  const double t = static_cast<double>(trials);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ConditionalGapEstimate best;
    best.x = xs[i];
    best.gap = -1.0;
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      double sum = 0.0;
      for (std::size_t r = 0; r < trials; ++r) sum += diffs[r * width + i * alphas.size() + a];
      const double mean = sum / t;
      double ss = 0.0;
      for (std::size_t r = 0; r < trials; ++r) {
        const double d = diffs[r * width + i * alphas.size() + a] - mean;
        ss += d * d;
      }
      if (std::abs(mean) > best.gap) {
        best.gap = std::abs(mean);
        best.standard_error = std::sqrt(ss / (t - 1.0) / t);
        best.alpha_at_max = alphas[a];
      }
    }
    out.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------- serialization

nlohmann::json to_json(const GapReport& report) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : report.bins) {
    bins.push_back({{"bin", b.bin}, {"count", b.count}, {"coverage", b.coverage}});
  }
  return {{"alpha", report.alpha}, {"overall", report.overall}, {"gap", report.gap},
          {"mae", report.mae}, {"bins", std::move(bins)}};
}

void write_gap_csv(std::ostream& out, std::span<const GapReport> reports) {
  std::string text = "alpha,bin,count,coverage,overall,gap,mae\n";
  for (const auto& r : reports) {
    for (const auto& b : r.bins) {
      text += fmt::format("{},{},{},{},{},{},{}\n", r.alpha, b.bin, b.count, b.coverage, r.overall,
                          r.gap, r.mae);
    }
  }
  out << text;
}

}  // namespace pivotal
