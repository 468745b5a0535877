#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pivotal/nn.hpp"
#include "pivotal/rq_spline.hpp"
#include "pivotal/scores.hpp"

namespace pivotal {

enum class ModelVariant { oracle, mdn, spline_flow };
enum class LatentMode { probability, flow_latent };

std::string_view to_string(ModelVariant variant) noexcept;
ModelVariant model_variant_from_string(std::string_view name);
std::string_view to_string(LatentMode mode) noexcept;

/// Which split a model was fitted on. Used to refuse calibration on the same data.
struct TrainingProvenance {
  std::optional<Role> role;
  std::uint64_t fingerprint = 0;
  bool trained = false;
};

/// Estimate of the conditional law of the score S given X = x.
///
/// `latent` is any strictly increasing transform of the score whose image
/// the model can invert; it defaults to the CDF itself.
class ConditionalScoreModel {
 public:
  virtual ~ConditionalScoreModel() = default;

  virtual ModelVariant variant() const noexcept = 0;
  virtual double cdf(std::span<const double> x, double s) const = 0;
  virtual double log_density(std::span<const double> x, double s) const = 0;
  /// u in [0, 1]; the endpoints map to the support bounds (possibly infinite).
  virtual double inverse_cdf(std::span<const double> x, double u) const = 0;

  virtual double latent(std::span<const double> x, double s) const { return cdf(x, s); }
  virtual double inverse_latent(std::span<const double> x, double v) const {
    return inverse_cdf(x, v);
  }
  virtual LatentMode default_latent_mode() const noexcept { return LatentMode::probability; }

  virtual nlohmann::json to_json() const = 0;

  const TrainingProvenance& provenance() const noexcept { return provenance_; }
  void set_provenance(TrainingProvenance provenance) { provenance_ = provenance; }

 private:
  TrainingProvenance provenance_;
};

using FeatureMap = std::function<double(std::span<const double>)>;

/// Closed-form conditional score law.
class OracleModel final : public ConditionalScoreModel {
 public:
  using Cdf = std::function<double(std::span<const double>, double)>;

  /// S | x ~ Exp(rate(x)).
  static OracleModel exponential_rate(FeatureMap rate);
  /// S | x = |N(0, scale(x)^2)|.
  static OracleModel half_normal_scale(FeatureMap scale);
  static OracleModel custom(std::string name, Cdf cdf, Cdf log_density, Cdf quantile);

  ModelVariant variant() const noexcept override { return ModelVariant::oracle; }
  double cdf(std::span<const double> x, double s) const override;
  double log_density(std::span<const double> x, double s) const override;
  double inverse_cdf(std::span<const double> x, double u) const override;
  nlohmann::json to_json() const override;

  const std::string& family() const noexcept { return family_; }

 private:
  OracleModel(std::string family, Cdf cdf, Cdf log_density, Cdf quantile);

  std::string family_;
  Cdf cdf_;
  Cdf log_density_;
  Cdf quantile_;
};

/// Affine standardization t -> (t - shift) / scale.
struct Standardizer {
  double shift = 0.0;
  double scale = 1.0;
};

/// Per-coordinate feature standardization fitted on the training features.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  void apply(std::span<const double> x, std::span<double> out) const;
};

/// Training view: standardized inputs are derived from these raw values.
struct ScoreSample {
  nn::RowMatrix features;
  std::vector<double> scores;
  TrainingProvenance provenance;

  std::size_t size() const noexcept { return scores.size(); }
};

ScoreSample make_score_sample(const Dataset& train, const NonconformityScore& score);

/// Model whose parameters come from an Mlp head evaluated on standardized features.
class NeuralScoreModel : public ConditionalScoreModel {
 public:
  const nn::Mlp& net() const noexcept { return net_; }
  nn::Mlp& net() noexcept { return net_; }
  const FeatureScaler& feature_scaler() const noexcept { return features_; }

  /// Network output at x.
  std::vector<double> head(std::span<const double> x) const;
  /// Standardized features of every training row, as network inputs.
  nn::RowMatrix network_inputs(const nn::RowMatrix& features) const;

  /// Per-sample negative log-likelihood of the raw score `s` given the head
  /// values; writes d nll / d head into `head_gradient`.
  virtual double head_nll(std::span<const double> head, double s,
                          std::span<double> head_gradient) const = 0;

 protected:
  NeuralScoreModel(nn::Mlp net, FeatureScaler features)
      : net_(std::move(net)), features_(std::move(features)) {}

  nlohmann::json base_json() const;

  nn::Mlp net_;
  FeatureScaler features_;
};

struct MdnOptions {
  std::size_t components = 5;
  std::vector<std::size_t> hidden = {32, 32};
  double sigma_floor = 1e-3;
};

struct MixtureParameters {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> scales;
};

/// Gaussian mixture density network on the standardized score.
class MdnModel final : public NeuralScoreModel {
 public:
  /// Glorot trunk; output biases place the component means at training-score
  /// quantiles with moderate scales.
  static MdnModel create(const ScoreSample& sample, const MdnOptions& options, std::uint64_t seed);
  /// Feature-independent mixture with identity standardization.
  static MdnModel constant(std::size_t feature_dim, const MixtureParameters& mixture,
                           double sigma_floor = 1e-3);

  ModelVariant variant() const noexcept override { return ModelVariant::mdn; }
  double cdf(std::span<const double> x, double s) const override;
  double log_density(std::span<const double> x, double s) const override;
  double inverse_cdf(std::span<const double> x, double u) const override;
  nlohmann::json to_json() const override;

  double head_nll(std::span<const double> head, double s,
                  std::span<double> head_gradient) const override;

  /// Mixture in raw score units at x.
  MixtureParameters mixture(std::span<const double> x) const;
  std::size_t components() const noexcept { return components_; }
  double sigma_floor() const noexcept { return sigma_floor_; }
  const Standardizer& score_standardizer() const noexcept { return score_; }

  static MdnModel from_json(const nlohmann::json& doc);

 private:
  MdnModel(nn::Mlp net, FeatureScaler features, Standardizer score, std::size_t components,
           double sigma_floor);
  MixtureParameters unpack(std::span<const double> head) const;

  Standardizer score_;
  std::size_t components_;
  double sigma_floor_;
};

struct SplineFlowOptions {
  spline::SplineShape shape;
  std::vector<std::size_t> hidden = {32, 32};
  double range_expansion = 0.05;
};

struct FlowValue {
  double u;
  double log_derivative;
};

/// Conditional monotone rational-quadratic spline flow with a Unif(0, 1)
/// base, so the flow output is the conditional CDF.
///
/// The spline acts on z = (s - s_lo) / (s_hi - s_lo) and is the identity
/// outside [0, 1]. The latent value v = spline(z) is squashed into (0, 1)
/// by a map that is affine on [0, 1] and has exponential tails of mass 1e-10,
/// keeping the CDF strictly increasing on the whole line.
class SplineFlowModel final : public NeuralScoreModel {
 public:
  static SplineFlowModel create(const ScoreSample& sample, const SplineFlowOptions& options,
                                std::uint64_t seed);
  /// Zero trunk: the identity spline on [s_lo, s_hi].
  static SplineFlowModel identity(std::size_t feature_dim, double s_lo, double s_hi,
                                  const SplineFlowOptions& options = {});

  ModelVariant variant() const noexcept override { return ModelVariant::spline_flow; }
  double cdf(std::span<const double> x, double s) const override;
  double log_density(std::span<const double> x, double s) const override;
  double inverse_cdf(std::span<const double> x, double u) const override;
  double latent(std::span<const double> x, double s) const override;
  double inverse_latent(std::span<const double> x, double v) const override;
  LatentMode default_latent_mode() const noexcept override { return LatentMode::flow_latent; }
  nlohmann::json to_json() const override;

  double head_nll(std::span<const double> head, double s,
                  std::span<double> head_gradient) const override;

  /// u = F(s | x) and the unfloored log density.
  FlowValue forward(std::span<const double> x, double s) const;
  /// Requires u in (0, 1).
  double inverse(std::span<const double> x, double u) const;

  double range_lo() const noexcept { return lo_; }
  double range_hi() const noexcept { return hi_; }
  const spline::SplineShape& shape() const noexcept { return shape_; }

  static SplineFlowModel from_json(const nlohmann::json& doc);

 private:
  SplineFlowModel(nn::Mlp net, FeatureScaler features, double lo, double hi,
                  spline::SplineShape shape);
  FlowValue forward_from_head(std::span<const double> head, double s) const;
  double latent_from_head(std::span<const double> head, double s) const;

  double lo_;
  double hi_;
  spline::SplineShape shape_;
};

/// Density floor applied by log_density of the learned models.
inline constexpr double kDensityFloor = 1e-6;

struct FitOptions {
  std::size_t epochs = 200;
  /// 0 means full batch.
  std::size_t batch_size = 0;
  nn::AdamOptions adam;
  /// Cosine decay of the step size from adam.learning_rate down to this
  /// fraction of it at the last epoch; 1 keeps it constant.
  double final_rate_fraction = 1.0;
  /// Share of the sample held out; when positive the parameters of the epoch
  /// with the lowest held-out loss are kept.
  double validation_fraction = 0.0;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  std::function<void(std::size_t epoch, double loss)> on_epoch;
};

struct FitReport {
  /// Mean negative log-likelihood per epoch, in raw score units.
  std::vector<double> loss_trace;
  /// Held-out loss per epoch; empty without a validation split.
  std::vector<double> validation_trace;
  std::size_t best_epoch = 0;
  std::size_t clipped_steps = 0;
  bool window_monotone = true;
};

/// Maximum-likelihood fit by minibatch Adam. Non-finite loss or parameters
/// raise ErrorCode::numerical carrying the epoch index.
FitReport fit_mle(NeuralScoreModel& model, const ScoreSample& sample, const FitOptions& options);
FitReport fit_mle(NeuralScoreModel& model, const Dataset& train, const NonconformityScore& score,
                  const FitOptions& options);

/// Restores a learned model written by to_json().
std::unique_ptr<ConditionalScoreModel> load_model(const nlohmann::json& doc);

}  // namespace pivotal
