#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pivotal/density.hpp"
#include "pivotal/diagnostics.hpp"
#include "pivotal/scores.hpp"
#include "pivotal/synth.hpp"

namespace pivotal {

inline constexpr std::string_view kVersion = "1.0.0";

enum class ExperimentKind { toy, convergence, illustration_ks, marginal_check };

std::string_view to_string(ExperimentKind kind) noexcept;
ExperimentKind experiment_kind_from_string(std::string_view name);

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::toy;
  synth::DgpKind dgp = synth::DgpKind::candy_gaussian;
  std::size_t n_train = 5000;
  std::size_t n_calibration = 1000;
  std::size_t n_test = 5000;
  std::vector<double> alphas = {0.1, 0.2, 0.3};
  ModelVariant model = ModelVariant::spline_flow;
  ScoreKind score = ScoreKind::absolute_residual;
  std::size_t epochs = 400;
  std::size_t batch_size = 128;
  double learning_rate = 5e-3;
  double lr_final_fraction = 0.05;
  double validation_fraction = 0.0;
  std::vector<std::size_t> hidden = {32, 32};
  std::size_t components = 5;
  std::size_t spline_bins = 16;
  std::size_t n_runs = 5;
  std::vector<std::size_t> train_ladder = {0, 1000, 2000, 3000, 4000, 5000};
  std::vector<ModelVariant> ladder_models = {ModelVariant::mdn, ModelVariant::spline_flow};
  std::size_t repetitions = 2000;
  std::size_t trials = 10000;
  std::size_t feature_bins = 10;
  std::size_t alpha_levels = 98;
  std::size_t grid_points = 41;
  std::vector<double> x_values = {0.0, 0.5, 1.0};
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "results";
};

/// Defaults for one experiment.
ExperimentConfig default_config(ExperimentKind kind);

/// Sets one field from its text form. Errors are ErrorCode::config and name the field.
void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value);

/// Flat `key = value` lines, `#` comments. A JSON run manifest is also
/// accepted (its `config` object is used), so a run can be replayed from it.
ExperimentConfig parse_config(std::istream& in, ExperimentKind kind);
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentKind kind);

void validate(const ExperimentConfig& config);

nlohmann::json to_json(const ExperimentConfig& config);
std::string to_key_value(const ExperimentConfig& config);

FitOptions fit_options(const ExperimentConfig& config, std::uint64_t seed);
/// The configured conditional score model for a base score: the closed-form
/// oracle of the data process, or a learned model fitted on `train`.
std::shared_ptr<ConditionalScoreModel> train_model(const ExperimentConfig& config,
                                                   ModelVariant variant, const Dataset& train,
                                                   ScoreKind score, std::uint64_t seed);

/// {y in grid : region admits (x, y)} as runs of consecutive grid points.
std::vector<Interval> scan_region(const NonconformityScore& score, const Threshold& threshold,
                                  std::span<const double> x, std::span<const double> y_grid);

struct ToyCase {
  ScoreKind score;
  double alpha;
  GapReport base;
  GapReport corrected;
};

struct ToyResult {
  std::vector<ToyCase> cases;
};

struct ConvergenceRow {
  std::string model;
  std::size_t n_train;
  double mean;
  double sd;
  std::vector<double> runs;
};

struct ConvergenceResult {
  std::vector<ConvergenceRow> rows;
  const ConvergenceRow& row(std::string_view model, std::size_t n_train) const;
};

struct KsRow {
  double x;
  double d_ks;
  double mc_gap;
  double mc_standard_error;
  double alpha_at_max;
};

struct IllustrationResult {
  std::vector<KsRow> rows;
};

struct MarginalRow {
  double alpha;
  std::string pipeline;
  double coverage;
  double lower;
  double upper;
  double standard_error;
};

struct MarginalResult {
  std::vector<MarginalRow> rows;
};

/// Each runner writes its CSV files plus manifest.json into
/// config.output_dir (skipped when the path is empty).
ToyResult run_toy(const ExperimentConfig& config);
ConvergenceResult run_convergence(const ExperimentConfig& config);
IllustrationResult run_illustration_ks(const ExperimentConfig& config);
MarginalResult run_marginal_check(const ExperimentConfig& config);
void run_experiment(const ExperimentConfig& config);

std::string sha256_hex(std::string_view bytes);

}  // namespace pivotal
