#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace pivotal {

enum class Role { train, calibration, test };

std::string_view to_string(Role role) noexcept;

struct LabeledSample {
  std::vector<double> features;
  std::vector<double> outcome;
};

/// Ordered samples sharing feature dimension p and outcome dimension d,
/// tagged with the split they belong to.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<LabeledSample> samples, Role role);

  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  Role role() const noexcept { return role_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t outcome_dim() const noexcept { return outcome_dim_; }

  const LabeledSample& operator[](std::size_t i) const { return samples_[i]; }
  auto begin() const noexcept { return samples_.begin(); }
  auto end() const noexcept { return samples_.end(); }
  const std::vector<LabeledSample>& samples() const noexcept { return samples_; }

  Dataset with_role(Role role) const;
  /// Hash of the sample values; the role tag is excluded.
  std::uint64_t fingerprint() const noexcept;

 private:
  std::vector<LabeledSample> samples_;
  Role role_ = Role::train;
  std::size_t feature_dim_ = 0;
  std::size_t outcome_dim_ = 0;
};

/// Half-open interval endpoints for 1-D sublevel sets. Unbounded ends are
/// reported as +-infinity; these are reporting values only.
struct Interval {
  double lo;
  double hi;
};

/// Deterministic map (x, y) -> real that orders candidate outcomes.
class NonconformityScore {
 public:
  virtual ~NonconformityScore() = default;

  virtual double evaluate(std::span<const double> x, std::span<const double> y) const = 0;

  /// {y : score(x, y) <= threshold} for scalar outcomes, as disjoint sorted
  /// intervals. Throws ErrorCode::unsupported when the score has no closed form.
  virtual std::vector<Interval> sublevel_set(std::span<const double> x, double threshold) const;
  /// Same set with an unbounded threshold.
  virtual std::vector<Interval> full_set(std::span<const double> x) const;

  virtual nlohmann::json describe() const = 0;
};

enum class ScoreKind { absolute_residual, raw_response, negative_density, scaled_linf_residual };

std::string_view to_string(ScoreKind kind) noexcept;
ScoreKind score_kind_from_string(std::string_view name);

using Predictor = std::function<std::vector<double>(std::span<const double>)>;
using OutcomeDensity = std::function<double(std::span<const double>, std::span<const double>)>;

/// The base score library: |y - f(x)|, y, -p(y|x) and ||D^{-1}(y - f(x))||_inf.
class ScoreFunction final : public NonconformityScore {
 public:
  /// |y - f(x)|; without a predictor f = 0.
  static ScoreFunction absolute_residual(Predictor predictor = {});
  static ScoreFunction raw_response();
  static ScoreFunction negative_density(OutcomeDensity density);
  static ScoreFunction scaled_linf_residual(Predictor predictor, std::vector<double> scale);

  ScoreKind kind() const noexcept { return kind_; }

  double evaluate(std::span<const double> x, std::span<const double> y) const override;
  std::vector<Interval> sublevel_set(std::span<const double> x, double threshold) const override;
  std::vector<Interval> full_set(std::span<const double> x) const override;
  nlohmann::json describe() const override;

 private:
  ScoreFunction(ScoreKind kind, Predictor predictor, std::vector<double> scale,
                OutcomeDensity density);
  double center(std::span<const double> x) const;

  ScoreKind kind_;
  Predictor predictor_;
  std::vector<double> scale_;
  OutcomeDensity density_;
};

double evaluate_score(const NonconformityScore& score, std::span<const double> x,
                      std::span<const double> y);
std::vector<double> evaluate_scores(const NonconformityScore& score, const Dataset& data);

struct DatasetSplit {
  Dataset train;
  Dataset calibration;
  Dataset test;
};

/// Seeded shuffle then floor allocation of calibration and test sizes; the
/// remainder goes to train.
DatasetSplit split_dataset(const Dataset& data, std::array<double, 3> fractions,
                           std::uint64_t seed);

// CSV with header x_0..x_{p-1},y_0..y_{d-1}.
Dataset read_csv(std::istream& in, Role role);
Dataset read_csv(const std::filesystem::path& path, Role role);
void write_csv(std::ostream& out, const Dataset& data);
void write_csv(const std::filesystem::path& path, const Dataset& data);

}  // namespace pivotal
