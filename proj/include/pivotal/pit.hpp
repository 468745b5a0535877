#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "pivotal/conformal.hpp"
#include "pivotal/density.hpp"
#include "pivotal/scores.hpp"

namespace pivotal {

/// Plug-in PIT-corrected score: the base score pushed through the estimated
/// conditional CDF (probability mode) or through the model's strictly
/// increasing latent map (flow_latent mode). Both modes order candidates
/// identically at fixed x, so they produce the same regions.
class PitCorrectedScore final : public NonconformityScore {
 public:
  /// Without an explicit mode the model's default is used.
  PitCorrectedScore(std::shared_ptr<const NonconformityScore> base,
                    std::shared_ptr<const ConditionalScoreModel> model,
                    std::optional<LatentMode> mode = std::nullopt);

  double evaluate(std::span<const double> x, std::span<const double> y) const override;
  /// Corrected value of an already computed base score.
  double correct(std::span<const double> x, double base_score) const;

  /// Base-score threshold t(x) with {corrected <= threshold} = {base <= t(x)}.
  double base_threshold(std::span<const double> x, double threshold) const;

  std::vector<Interval> sublevel_set(std::span<const double> x, double threshold) const override;
  std::vector<Interval> full_set(std::span<const double> x) const override;
  nlohmann::json describe() const override;

  LatentMode mode() const noexcept { return mode_; }
  const NonconformityScore& base() const noexcept { return *base_; }
  const ConditionalScoreModel& model() const noexcept { return *model_; }

 private:
  std::shared_ptr<const NonconformityScore> base_;
  std::shared_ptr<const ConditionalScoreModel> model_;
  LatentMode mode_;
};

/// Split conformal calibration of a corrected score. The sorted corrected
/// calibration scores are stored once; any alpha is then a rank lookup.
class PitPipeline {
 public:
  PitPipeline(std::shared_ptr<const PitCorrectedScore> score, const Dataset& calibration,
              std::uint64_t tie_seed = 0);

  Threshold threshold(double alpha) const { return conformal_.threshold(alpha); }
  PredictionRegion region(double alpha) const { return conformal_.region(alpha); }
  std::span<const double> corrected_scores() const noexcept {
    return conformal_.calibrator().sorted_scores();
  }
  const PitCorrectedScore& score() const noexcept { return *score_; }
  std::shared_ptr<const PitCorrectedScore> score_ptr() const noexcept { return score_; }

  nlohmann::json to_json() const;

 private:
  std::shared_ptr<const PitCorrectedScore> score_;
  SplitConformal conformal_;
};

/// Checks the split roles (calibration data tagged as such, model not fitted
/// on it) and calibrates the corrected score.
PitPipeline build_pipeline(std::shared_ptr<const NonconformityScore> base,
                           std::shared_ptr<const ConditionalScoreModel> model,
                           const Dataset& calibration,
                           std::optional<LatentMode> mode = std::nullopt,
                           std::uint64_t tie_seed = 0);

PredictionRegion corrected_region(const PitPipeline& pipe, double alpha);
/// The region at x as base-score intervals.
std::vector<Interval> corrected_intervals(const PitPipeline& pipe, std::span<const double> x,
                                          double alpha);

}  // namespace pivotal
