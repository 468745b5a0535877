#include "pivotal/pit.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "pivotal/error.hpp"

namespace pivotal {

PitCorrectedScore::PitCorrectedScore(std::shared_ptr<const NonconformityScore> base,
                                     std::shared_ptr<const ConditionalScoreModel> model,
                                     std::optional<LatentMode> mode)
    : base_(std::move(base)), model_(std::move(model)) {
  PIVOTAL_REQUIRE(base_ && model_, ErrorCode::invalid_argument,
                  "corrected score needs a base score and a model");
  mode_ = mode.value_or(model_->default_latent_mode());
}

double PitCorrectedScore::correct(std::span<const double> x, double base_score) const {
  return mode_ == LatentMode::probability ? model_->cdf(x, base_score)
                                          : model_->latent(x, base_score);
}

double PitCorrectedScore::evaluate(std::span<const double> x, std::span<const double> y) const {
  const double value = correct(x, base_->evaluate(x, y));
  PIVOTAL_REQUIRE(!std::isnan(value), ErrorCode::non_finite, "corrected score is NaN");
  return value;
}

double PitCorrectedScore::base_threshold(std::span<const double> x, double threshold) const {
  if (mode_ == LatentMode::flow_latent) return model_->inverse_latent(x, threshold);
  if (threshold >= 1.0) return std::numeric_limits<double>::infinity();
  if (threshold < 0.0) return -std::numeric_limits<double>::infinity();
  return model_->inverse_cdf(x, threshold);
}

std::vector<Interval> PitCorrectedScore::sublevel_set(std::span<const double> x,
                                                      double threshold) const {
  const double t = base_threshold(x, threshold);
  if (std::isinf(t) && t > 0.0) return base_->full_set(x);
  return base_->sublevel_set(x, t);
}

std::vector<Interval> PitCorrectedScore::full_set(std::span<const double> x) const {
  return base_->full_set(x);
}

nlohmann::json PitCorrectedScore::describe() const {
  return {{"kind", "pit_corrected"},
          {"latent_mode", std::string(to_string(mode_))},
          {"base", base_->describe()},
          {"model_variant", std::string(to_string(model_->variant()))}};
}

PitPipeline::PitPipeline(std::shared_ptr<const PitCorrectedScore> score,
                         const Dataset& calibration, std::uint64_t tie_seed)
    : score_(std::move(score)), conformal_(score_, calibration, tie_seed) {}

nlohmann::json PitPipeline::to_json() const {
  const auto sorted = corrected_scores();
  const auto& model = score_->model();
  nlohmann::json reference = {{"variant", std::string(to_string(model.variant()))},
                              {"trained", model.provenance().trained},
                              {"fingerprint", model.provenance().fingerprint}};
  return {{"format_version", 1},
          {"latent_mode", std::string(to_string(score_->mode()))},
          {"base_score", score_->base().describe()},
          {"model", std::move(reference)},
          {"calibration_size", sorted.size()},
          {"sorted_corrected_scores", std::vector<double>(sorted.begin(), sorted.end())}};
}

PitPipeline build_pipeline(std::shared_ptr<const NonconformityScore> base,
                           std::shared_ptr<const ConditionalScoreModel> model,
                           const Dataset& calibration, std::optional<LatentMode> mode,
                           std::uint64_t tie_seed) {
  PIVOTAL_REQUIRE(model, ErrorCode::invalid_argument, "pipeline needs a model");
  PIVOTAL_REQUIRE(calibration.role() == Role::calibration, ErrorCode::role_violation,
                  fmt::format("calibration data is tagged '{}'", to_string(calibration.role())));
  const auto& prov = model->provenance();
  PIVOTAL_REQUIRE(prov.role != Role::calibration, ErrorCode::role_violation,
                  "model was fitted on a calibration split");
  PIVOTAL_REQUIRE(!(prov.trained && prov.fingerprint == calibration.fingerprint()),
                  ErrorCode::role_violation, "model was fitted on the calibration data");
  auto score = std::make_shared<const PitCorrectedScore>(std::move(base), std::move(model), mode);
  return PitPipeline(std::move(score), calibration, tie_seed);
}

PredictionRegion corrected_region(const PitPipeline& pipe, double alpha) {
  return pipe.region(alpha);
}

std::vector<Interval> corrected_intervals(const PitPipeline& pipe, std::span<const double> x,
                                          double alpha) {
  return interval_from_threshold(pipe.region(alpha), x);
}

}  // namespace pivotal
