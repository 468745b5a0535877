#include "pivotal/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "pivotal/error.hpp"
#include "pivotal/log.hpp"
#include "pivotal/normal.hpp"
#include "pivotal/random.hpp"

namespace pivotal {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kModelFormatVersion = 1;
// Mass of each exponential tail of the latent squashing map.
constexpr double kTailMass = 1e-10;

double softplus(double v) noexcept { return v > 30.0 ? v : std::log1p(std::exp(v)); }
double sigmoid(double v) noexcept { return 1.0 / (1.0 + std::exp(-v)); }
double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

double log_sum_exp(std::span<const double> v) {
  const double top = *std::ranges::max_element(v);
  if (!std::isfinite(top)) return top;
  double total = 0.0;
  for (double e : v) total += std::exp(e - top);
  return top + std::log(total);
}

// Latent v -> probability; affine on [0, 1] with exponential tails.
double squash(double v) noexcept {
  if (v < 0.0) return kTailMass * std::exp(v);
  if (v > 1.0) return 1.0 - kTailMass * std::exp(1.0 - v);
  return kTailMass + (1.0 - 2.0 * kTailMass) * v;
}

double log_squash_derivative(double v) noexcept {
  if (v < 0.0) return std::log(kTailMass) + v;
  if (v > 1.0) return std::log(kTailMass) + 1.0 - v;
  return std::log1p(-2.0 * kTailMass);
}

double unsquash(double u) noexcept {
  if (u < kTailMass) return std::log(u / kTailMass);
  if (u > 1.0 - kTailMass) return 1.0 - std::log((1.0 - u) / kTailMass);
  return (u - kTailMass) / (1.0 - 2.0 * kTailMass);
}

void require_unit_interval(double u) {
  PIVOTAL_REQUIRE(u >= 0.0 && u <= 1.0, ErrorCode::invalid_argument,
                  fmt::format("probability {} outside [0, 1]", u));
}

FeatureScaler fit_feature_scaler(const nn::RowMatrix& features) {
  const auto n = features.rows();
  const auto p = static_cast<std::size_t>(features.cols());
  FeatureScaler scaler{std::vector<double>(p, 0.0), std::vector<double>(p, 1.0)};
  if (n == 0) return scaler;
  for (std::size_t j = 0; j < p; ++j) {
    const auto col = features.col(static_cast<Eigen::Index>(j));
    const double mean = col.mean();
    const double var = (col.array() - mean).square().mean();
    scaler.mean[j] = mean;
    scaler.scale[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return scaler;
}

nlohmann::json provenance_json(const TrainingProvenance& p) {
  nlohmann::json doc = {{"trained", p.trained}, {"fingerprint", p.fingerprint}};
  doc["role"] = p.role ? nlohmann::json(std::string(to_string(*p.role))) : nlohmann::json();
  return doc;
}

TrainingProvenance provenance_from_json(const nlohmann::json& doc) {
  TrainingProvenance p;
  p.trained = doc.at("trained").get<bool>();
  p.fingerprint = doc.at("fingerprint").get<std::uint64_t>();
  if (!doc.at("role").is_null()) {
    const auto role = doc.at("role").get<std::string>();
    if (role == "train") p.role = Role::train;
    else if (role == "calibration") p.role = Role::calibration;
    else if (role == "test") p.role = Role::test;
    else throw Error(ErrorCode::io, fmt::format("unknown role '{}'", role));
  }
  return p;
}

std::vector<std::size_t> layer_sizes(std::size_t input, const std::vector<std::size_t>& hidden,
                                     std::size_t output) {
  std::vector<std::size_t> sizes{input};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(output);
  return sizes;
}

}  // namespace

std::string_view to_string(ModelVariant variant) noexcept {
  switch (variant) {
    case ModelVariant::oracle: return "oracle";
    case ModelVariant::mdn: return "mdn";
    case ModelVariant::spline_flow: return "spline_flow";
  }
  return "unknown";
}

ModelVariant model_variant_from_string(std::string_view name) {
  if (name == "oracle") return ModelVariant::oracle;
  if (name == "mdn") return ModelVariant::mdn;
  if (name == "spline_flow") return ModelVariant::spline_flow;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown model variant '{}'", name));
}

std::string_view to_string(LatentMode mode) noexcept {
  return mode == LatentMode::probability ? "probability" : "flow_latent";
}

// ---------------------------------------------------------------- oracle

OracleModel::OracleModel(std::string family, Cdf cdf, Cdf log_density, Cdf quantile)
    : family_(std::move(family)),
      cdf_(std::move(cdf)),
      log_density_(std::move(log_density)),
      quantile_(std::move(quantile)) {}

OracleModel OracleModel::exponential_rate(FeatureMap rate) {
  auto checked = [rate = std::move(rate)](std::span<const double> x) {
    const double r = rate(x);
    PIVOTAL_REQUIRE(r > 0.0 && std::isfinite(r), ErrorCode::invalid_argument,
                    "exponential rate must be positive");
    return r;
  };
  return OracleModel(
      "exponential_rate",
      [checked](std::span<const double> x, double t) {
        return t <= 0.0 ? 0.0 : -std::expm1(-checked(x) * t);
      },
      [checked](std::span<const double> x, double t) {
        const double r = checked(x);
        return t < 0.0 ? -kInf : std::log(r) - r * t;
      },
      [checked](std::span<const double> x, double u) {
        if (u >= 1.0) return kInf;
        return -std::log1p(-u) / checked(x);
      });
}

OracleModel OracleModel::half_normal_scale(FeatureMap scale) {
  auto checked = [scale = std::move(scale)](std::span<const double> x) {
    const double s = scale(x);
    PIVOTAL_REQUIRE(s > 0.0 && std::isfinite(s), ErrorCode::invalid_argument,
                    "half-normal scale must be positive");
    return s;
  };
  return OracleModel(
      "half_normal_scale",
      [checked](std::span<const double> x, double t) {
        if (t <= 0.0) return 0.0;
        return 1.0 - std::erfc(t / (checked(x) * std::sqrt(2.0)));
      },
      [checked](std::span<const double> x, double t) {
        const double s = checked(x);
        return t < 0.0 ? -kInf : std::log(2.0) + normal_log_pdf(t / s) - std::log(s);
      },
      [checked](std::span<const double> x, double u) {
        return checked(x) * normal_quantile(0.5 + 0.5 * u);
      });
}

OracleModel OracleModel::custom(std::string name, Cdf cdf, Cdf log_density, Cdf quantile) {
  PIVOTAL_REQUIRE(cdf && log_density && quantile, ErrorCode::invalid_argument,
                  "custom oracle needs cdf, log density and quantile");
  return OracleModel(std::move(name), std::move(cdf), std::move(log_density),
                     std::move(quantile));
}

double OracleModel::cdf(std::span<const double> x, double s) const { return cdf_(x, s); }

double OracleModel::log_density(std::span<const double> x, double s) const {
  return log_density_(x, s);
}

double OracleModel::inverse_cdf(std::span<const double> x, double u) const {
  require_unit_interval(u);
  return quantile_(x, u);
}

nlohmann::json OracleModel::to_json() const {
  return {{"variant", "oracle"}, {"family", family_}, {"provenance", provenance_json(provenance())}};
}

// ---------------------------------------------------------------- shared neural plumbing

void FeatureScaler::apply(std::span<const double> x, std::span<double> out) const {
  PIVOTAL_REQUIRE(x.size() == mean.size(), ErrorCode::dimension_mismatch,
                  fmt::format("feature length {} differs from model input size {}", x.size(),
                              mean.size()));
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
}

ScoreSample make_score_sample(const Dataset& train, const NonconformityScore& score) {
  PIVOTAL_REQUIRE(!train.empty(), ErrorCode::empty_input, "no training data to fit");
  ScoreSample sample;
  const auto n = static_cast<Eigen::Index>(train.size());
  const auto p = static_cast<Eigen::Index>(train.feature_dim());
  sample.features.resize(n, p);
  sample.scores = evaluate_scores(score, train);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& f = train[static_cast<std::size_t>(i)].features;
    for (Eigen::Index j = 0; j < p; ++j) sample.features(i, j) = f[static_cast<std::size_t>(j)];
  }
  sample.provenance = {train.role(), train.fingerprint(), false};
  return sample;
}

std::vector<double> NeuralScoreModel::head(std::span<const double> x) const {
  std::vector<double> z(x.size());
  features_.apply(x, z);
  return nn::forward(net_, z);
}

nn::RowMatrix NeuralScoreModel::network_inputs(const nn::RowMatrix& features) const {
  PIVOTAL_REQUIRE(static_cast<std::size_t>(features.cols()) == features_.mean.size(),
                  ErrorCode::dimension_mismatch, "feature width differs from the model input");
  nn::RowMatrix out = features;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    out.col(j) = (out.col(j).array() - features_.mean[k]) / features_.scale[k];
  }
  return out;
}

nlohmann::json NeuralScoreModel::base_json() const {
  return {{"format_version", kModelFormatVersion},
          {"variant", std::string(to_string(variant()))},
          {"network", nn::to_json(net_)},
          {"feature_mean", features_.mean},
          {"feature_scale", features_.scale},
          {"provenance", provenance_json(provenance())}};
}

// ---------------------------------------------------------------- mixture density network

MdnModel::MdnModel(nn::Mlp net, FeatureScaler features, Standardizer score,
                   std::size_t components, double sigma_floor)
    : NeuralScoreModel(std::move(net), std::move(features)),
      score_(score),
      components_(components),
      sigma_floor_(sigma_floor) {
  PIVOTAL_REQUIRE(components_ >= 1, ErrorCode::invalid_argument, "MDN needs a component");
  PIVOTAL_REQUIRE(sigma_floor_ > 0.0, ErrorCode::invalid_argument, "sigma floor must be positive");
  PIVOTAL_REQUIRE(net_.output_size() == 3 * components_, ErrorCode::dimension_mismatch,
                  "MDN head must have 3m outputs");
}

MdnModel MdnModel::create(const ScoreSample& sample, const MdnOptions& options,
                          std::uint64_t seed) {
  PIVOTAL_REQUIRE(sample.size() > 0, ErrorCode::empty_input, "no training data to fit");
  const std::size_t m = options.components;
  PIVOTAL_REQUIRE(m >= 1, ErrorCode::invalid_argument, "MDN needs a component");
  const auto p = static_cast<std::size_t>(sample.features.cols());

  const double n = static_cast<double>(sample.size());
  const double mean = std::accumulate(sample.scores.begin(), sample.scores.end(), 0.0) / n;
  double var = 0.0;
  for (double s : sample.scores) var += (s - mean) * (s - mean);
  var /= n;
  const Standardizer score{mean, var > 0.0 ? std::sqrt(var) : 1.0};

  nn::Mlp net = nn::Mlp::glorot(layer_sizes(p, options.hidden, 3 * m), seed);
  std::vector<double> sorted = sample.scores;
  std::ranges::sort(sorted);
  auto bias = net.bias(net.layer_count() - 1);
  for (std::size_t j = 0; j < m; ++j) {
    const double q = (static_cast<double>(j) + 0.5) / static_cast<double>(m);
    const auto idx = std::min(sorted.size() - 1, static_cast<std::size_t>(q * n));
    bias(static_cast<Eigen::Index>(m + j)) = (sorted[idx] - score.shift) / score.scale;
    bias(static_cast<Eigen::Index>(2 * m + j)) = softplus_inverse(0.5 - options.sigma_floor);
  }
  MdnModel model(std::move(net), fit_feature_scaler(sample.features), score, m,
                 options.sigma_floor);
  model.set_provenance(sample.provenance);
  return model;
}

MdnModel MdnModel::constant(std::size_t feature_dim, const MixtureParameters& mixture,
                            double sigma_floor) {
  const std::size_t m = mixture.weights.size();
  PIVOTAL_REQUIRE(m >= 1 && mixture.means.size() == m && mixture.scales.size() == m,
                  ErrorCode::dimension_mismatch, "mixture parameter lengths differ");
  nn::Mlp net({feature_dim, 3 * m});
  auto bias = net.bias(0);
  for (std::size_t j = 0; j < m; ++j) {
    const double w = mixture.weights[j];
    const double s = mixture.scales[j];
    PIVOTAL_REQUIRE(w >= 0.0, ErrorCode::invalid_argument, "mixture weights must be >= 0");
    PIVOTAL_REQUIRE(s > sigma_floor, ErrorCode::invalid_argument,
                    "mixture scales must exceed the floor");
    const auto k = static_cast<Eigen::Index>(j);
    bias(k) = w > 0.0 ? std::log(w) : -1e3;
    bias(static_cast<Eigen::Index>(m) + k) = mixture.means[j];
    bias(static_cast<Eigen::Index>(2 * m) + k) = softplus_inverse(s - sigma_floor);
  }
  FeatureScaler scaler{std::vector<double>(feature_dim, 0.0), std::vector<double>(feature_dim, 1.0)};
  return MdnModel(std::move(net), std::move(scaler), Standardizer{}, m, sigma_floor);
}

MixtureParameters MdnModel::unpack(std::span<const double> head) const {
  const std::size_t m = components_;
  MixtureParameters mix;
  const double lse = log_sum_exp(head.subspan(0, m));
  for (std::size_t j = 0; j < m; ++j) {
    mix.weights.push_back(std::exp(head[j] - lse));
    mix.means.push_back(head[m + j]);
    mix.scales.push_back(sigma_floor_ + softplus(head[2 * m + j]));
  }
  return mix;
}

MixtureParameters MdnModel::mixture(std::span<const double> x) const {
  MixtureParameters mix = unpack(head(x));
  for (std::size_t j = 0; j < components_; ++j) {
    mix.means[j] = score_.shift + score_.scale * mix.means[j];
    mix.scales[j] *= score_.scale;
  }
  return mix;
}

double MdnModel::cdf(std::span<const double> x, double s) const {
  const MixtureParameters mix = unpack(head(x));
  const double z = (s - score_.shift) / score_.scale;
  double total = 0.0;
  for (std::size_t j = 0; j < components_; ++j) {
    total += mix.weights[j] * normal_cdf((z - mix.means[j]) / mix.scales[j]);
  }
  return std::clamp(total, 0.0, 1.0);
}

double MdnModel::log_density(std::span<const double> x, double s) const {
  const MixtureParameters mix = unpack(head(x));
  const double z = (s - score_.shift) / score_.scale;
  std::vector<double> terms(components_);
  for (std::size_t j = 0; j < components_; ++j) {
    terms[j] = std::log(mix.weights[j]) + normal_log_pdf((z - mix.means[j]) / mix.scales[j]) -
               std::log(mix.scales[j]);
  }
  const double value = log_sum_exp(terms) - std::log(score_.scale);
  return std::max(value, std::log(kDensityFloor));
}

double MdnModel::inverse_cdf(std::span<const double> x, double u) const {
  require_unit_interval(u);
  if (u == 0.0) return -kInf;
  if (u == 1.0) return kInf;
  const MixtureParameters mix = unpack(head(x));
  const auto mixture_cdf = [&](double z) {
    double total = 0.0;
    for (std::size_t j = 0; j < components_; ++j) {
      total += mix.weights[j] * normal_cdf((z - mix.means[j]) / mix.scales[j]);
    }
    return total;
  };
  const double sigma_max = *std::ranges::max_element(mix.scales);
  double lo = *std::ranges::min_element(mix.means) - 10.0 * sigma_max;
  double hi = *std::ranges::max_element(mix.means) + 10.0 * sigma_max;
  for (int i = 0; i < 64 && mixture_cdf(lo) > u; ++i) lo -= (hi - lo);
  for (int i = 0; i < 64 && mixture_cdf(hi) < u; ++i) hi += (hi - lo);
  // Bisect to machine resolution; always finer than 1e-8 in standardized units.
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (mixture_cdf(mid) < u ? lo : hi) = mid;
  }
  return score_.shift + score_.scale * hi;
}

double MdnModel::head_nll(std::span<const double> head, double s,
                          std::span<double> head_gradient) const {
  const std::size_t m = components_;
  const double z = (s - score_.shift) / score_.scale;
  const double logit_lse = log_sum_exp(head.subspan(0, m));

  double terms_buffer[64];
  std::vector<double> terms_heap;
  std::span<double> terms;
  if (m <= 64) {
    terms = std::span<double>(terms_buffer, m);
  } else {
    terms_heap.resize(m);
    terms = terms_heap;
  }
  for (std::size_t j = 0; j < m; ++j) {
    const double sigma = sigma_floor_ + softplus(head[2 * m + j]);
    const double t = (z - head[m + j]) / sigma;
    terms[j] = head[j] - logit_lse + normal_log_pdf(t) - std::log(sigma);
  }
  const double lse = log_sum_exp(terms);
  for (std::size_t j = 0; j < m; ++j) {
    const double raw = head[2 * m + j];
    const double sigma = sigma_floor_ + softplus(raw);
    const double t = (z - head[m + j]) / sigma;
    const double resp = std::exp(terms[j] - lse);
    const double weight = std::exp(head[j] - logit_lse);
    head_gradient[j] = weight - resp;
    head_gradient[m + j] = -resp * t / sigma;
    head_gradient[2 * m + j] = -resp * (t * t - 1.0) / sigma * sigmoid(raw);
  }
  return -lse + std::log(score_.scale);
}

nlohmann::json MdnModel::to_json() const {
  nlohmann::json doc = base_json();
  doc["components"] = components_;
  doc["sigma_floor"] = sigma_floor_;
  doc["score_shift"] = score_.shift;
  doc["score_scale"] = score_.scale;
  return doc;
}

MdnModel MdnModel::from_json(const nlohmann::json& doc) {
  try {
    PIVOTAL_REQUIRE(doc.at("variant").get<std::string>() == "mdn", ErrorCode::io,
                    "document is not an MDN model");
    FeatureScaler scaler{doc.at("feature_mean").get<std::vector<double>>(),
                         doc.at("feature_scale").get<std::vector<double>>()};
    MdnModel model(nn::mlp_from_json(doc.at("network")), std::move(scaler),
                   Standardizer{doc.at("score_shift").get<double>(),
                                doc.at("score_scale").get<double>()},
                   doc.at("components").get<std::size_t>(), doc.at("sigma_floor").get<double>());
    model.set_provenance(provenance_from_json(doc.at("provenance")));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, fmt::format("malformed MDN document: {}", e.what()));
  }
}

// ---------------------------------------------------------------- spline flow

SplineFlowModel::SplineFlowModel(nn::Mlp net, FeatureScaler features, double lo, double hi,
                                 spline::SplineShape shape)
    : NeuralScoreModel(std::move(net), std::move(features)), lo_(lo), hi_(hi), shape_(shape) {
  PIVOTAL_REQUIRE(std::isfinite(lo_) && std::isfinite(hi_) && hi_ > lo_,
                  ErrorCode::invalid_argument, "spline range must satisfy s_lo < s_hi");
  PIVOTAL_REQUIRE(net_.output_size() == spline::head_size(shape_.bins),
                  ErrorCode::dimension_mismatch, "spline head must have 3K - 1 outputs");
}

SplineFlowModel SplineFlowModel::create(const ScoreSample& sample,
                                        const SplineFlowOptions& options, std::uint64_t seed) {
  PIVOTAL_REQUIRE(sample.size() > 0, ErrorCode::empty_input, "no training data to fit");
  const auto [min_it, max_it] = std::ranges::minmax_element(sample.scores);
  double width = *max_it - *min_it;
  if (width <= 0.0) width = std::max(1.0, std::abs(*min_it));
  const double lo = *min_it - options.range_expansion * width;
  const double hi = *max_it + options.range_expansion * width;
  const auto p = static_cast<std::size_t>(sample.features.cols());
  nn::Mlp net = nn::Mlp::glorot(layer_sizes(p, options.hidden, spline::head_size(options.shape.bins)),
                                seed);
  SplineFlowModel model(std::move(net), fit_feature_scaler(sample.features), lo, hi,
                        options.shape);
  model.set_provenance(sample.provenance);
  return model;
}

SplineFlowModel SplineFlowModel::identity(std::size_t feature_dim, double s_lo, double s_hi,
                                          const SplineFlowOptions& options) {
  nn::Mlp net(layer_sizes(feature_dim, options.hidden, spline::head_size(options.shape.bins)));
  FeatureScaler scaler{std::vector<double>(feature_dim, 0.0), std::vector<double>(feature_dim, 1.0)};
  return SplineFlowModel(std::move(net), std::move(scaler), s_lo, s_hi, options.shape);
}

double SplineFlowModel::latent_from_head(std::span<const double> head, double s) const {
  const double z = (s - lo_) / (hi_ - lo_);
  if (z < 0.0 || z > 1.0) return z;
  return spline::evaluate(spline::build_knots(head, shape_), z).value;
}

FlowValue SplineFlowModel::forward_from_head(std::span<const double> head, double s) const {
  const double range = hi_ - lo_;
  const double z = (s - lo_) / range;
  double v = z;
  double log_slope = 0.0;
  if (z >= 0.0 && z <= 1.0) {
    const auto value = spline::evaluate(spline::build_knots(head, shape_), z);
    v = value.value;
    log_slope = value.log_derivative;
  }
  return {squash(v), log_squash_derivative(v) + log_slope - std::log(range)};
}

FlowValue SplineFlowModel::forward(std::span<const double> x, double s) const {
  return forward_from_head(head(x), s);
}

double SplineFlowModel::latent(std::span<const double> x, double s) const {
  return latent_from_head(head(x), s);
}

double SplineFlowModel::inverse_latent(std::span<const double> x, double v) const {
  PIVOTAL_REQUIRE(std::isfinite(v), ErrorCode::invalid_argument, "latent value must be finite");
  double z = v;
  if (v >= 0.0 && v <= 1.0) z = spline::invert(spline::build_knots(head(x), shape_), v);
  return lo_ + (hi_ - lo_) * z;
}

double SplineFlowModel::inverse(std::span<const double> x, double u) const {
  PIVOTAL_REQUIRE(u > 0.0 && u < 1.0, ErrorCode::invalid_argument,
                  fmt::format("spline inverse needs u in (0, 1), got {}", u));
  return inverse_latent(x, unsquash(u));
}

double SplineFlowModel::cdf(std::span<const double> x, double s) const {
  return squash(latent(x, s));
}

double SplineFlowModel::log_density(std::span<const double> x, double s) const {
  return std::max(forward(x, s).log_derivative, std::log(kDensityFloor));
}

double SplineFlowModel::inverse_cdf(std::span<const double> x, double u) const {
  require_unit_interval(u);
  if (u == 0.0) return -kInf;
  if (u == 1.0) return kInf;
  return inverse(x, u);
}

double SplineFlowModel::head_nll(std::span<const double> head, double s,
                                 std::span<double> head_gradient) const {
  const double range = hi_ - lo_;
  const double z = (s - lo_) / range;
  if (z < 0.0 || z > 1.0) {
    std::ranges::fill(head_gradient, 0.0);
    return -(log_squash_derivative(z) - std::log(range));
  }
  const auto knots = spline::build_knots(head, shape_);
  const double log_slope = spline::log_derivative_with_gradient(knots, z, head_gradient);
  for (double& g : head_gradient) g = -g;
  return -(log_squash_derivative(0.5) + log_slope - std::log(range));
}

nlohmann::json SplineFlowModel::to_json() const {
  nlohmann::json doc = base_json();
  doc["range_lo"] = lo_;
  doc["range_hi"] = hi_;
  doc["bins"] = shape_.bins;
  doc["min_bin_width"] = shape_.min_bin_width;
  doc["min_bin_height"] = shape_.min_bin_height;
  doc["min_derivative"] = shape_.min_derivative;
  return doc;
}

SplineFlowModel SplineFlowModel::from_json(const nlohmann::json& doc) {
  try {
    PIVOTAL_REQUIRE(doc.at("variant").get<std::string>() == "spline_flow", ErrorCode::io,
                    "document is not a spline flow model");
    spline::SplineShape shape{doc.at("bins").get<std::size_t>(),
                              doc.at("min_bin_width").get<double>(),
                              doc.at("min_bin_height").get<double>(),
                              doc.at("min_derivative").get<double>()};
    FeatureScaler scaler{doc.at("feature_mean").get<std::vector<double>>(),
                         doc.at("feature_scale").get<std::vector<double>>()};
    SplineFlowModel model(nn::mlp_from_json(doc.at("network")), std::move(scaler),
                          doc.at("range_lo").get<double>(), doc.at("range_hi").get<double>(),
                          shape);
    model.set_provenance(provenance_from_json(doc.at("provenance")));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, fmt::format("malformed spline flow document: {}", e.what()));
  }
}

// ---------------------------------------------------------------- training

FitReport fit_mle(NeuralScoreModel& model, const ScoreSample& sample, const FitOptions& options) {
  const std::size_t n = sample.size();
  PIVOTAL_REQUIRE(n > 0, ErrorCode::empty_input, "no training data to fit");
  PIVOTAL_REQUIRE(static_cast<std::size_t>(sample.features.rows()) == n,
                  ErrorCode::dimension_mismatch, "feature rows differ from score count");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(sample.scores[i])) {
      throw Error(ErrorCode::non_finite, fmt::format("training score {} is not finite", i), i);
    }
  }

  PIVOTAL_REQUIRE(options.validation_fraction >= 0.0 && options.validation_fraction < 1.0,
                  ErrorCode::invalid_argument, "validation_fraction must lie in [0, 1)");
  PIVOTAL_REQUIRE(options.final_rate_fraction > 0.0 && options.final_rate_fraction <= 1.0,
                  ErrorCode::invalid_argument, "final_rate_fraction must lie in (0, 1]");

  FitReport report;
  const nn::RowMatrix inputs = model.network_inputs(sample.features);
  const auto head_width = static_cast<Eigen::Index>(model.net().output_size());
  CounterRng rng(options.seed, 0xF17);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> held_out;
  if (options.validation_fraction > 0.0 && n >= 2) {
    CounterRng split_rng(options.seed, 0x5A1);
    shuffle(order, split_rng);
    const auto n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(options.validation_fraction * static_cast<double>(n)), 1, n - 1);
    held_out.assign(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
    order.resize(n - n_val);
  }
  const std::size_t n_fit = order.size();
  const std::size_t batch = options.batch_size == 0 ? n_fit : std::min(options.batch_size, n_fit);

  nn::AdamState adam(model.net().parameter_count(), options.adam);
  std::vector<double> grad(model.net().parameter_count());
  nn::RowMatrix x_batch;
  nn::RowMatrix out_grad;
  nn::ForwardCache cache;
  std::vector<double> row_head(static_cast<std::size_t>(head_width));
  std::vector<double> row_grad(static_cast<std::size_t>(head_width));

  nn::RowMatrix x_val(static_cast<Eigen::Index>(held_out.size()), inputs.cols());
  for (std::size_t r = 0; r < held_out.size(); ++r) {
    x_val.row(static_cast<Eigen::Index>(r)) = inputs.row(static_cast<Eigen::Index>(held_out[r]));
  }
  const auto validation_loss = [&] {
    const nn::RowMatrix head = nn::forward_batch(model.net(), x_val);
    double total = 0.0;
    for (std::size_t r = 0; r < held_out.size(); ++r) {
      for (Eigen::Index c = 0; c < head_width; ++c) {
        row_head[static_cast<std::size_t>(c)] = head(static_cast<Eigen::Index>(r), c);
      }
      total += model.head_nll(row_head, sample.scores[held_out[r]], row_grad);
    }
    return total / static_cast<double>(held_out.size());
  };
  std::vector<double> best_parameters;
  double best_validation = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    if (options.epochs > 1) {
      const double progress = static_cast<double>(epoch) / static_cast<double>(options.epochs - 1);
      const double floor = options.final_rate_fraction;
      adam.set_learning_rate(options.adam.learning_rate *
                             (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
    }
    if (batch < n_fit) shuffle(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_fit; start += batch) {
      const std::size_t b = std::min(batch, n_fit - start);
      x_batch.resize(static_cast<Eigen::Index>(b), inputs.cols());
      for (std::size_t r = 0; r < b; ++r) {
        x_batch.row(static_cast<Eigen::Index>(r)) = inputs.row(static_cast<Eigen::Index>(order[start + r]));
      }
      const nn::RowMatrix head = nn::forward_batch(model.net(), x_batch, &cache);
      out_grad.resize(static_cast<Eigen::Index>(b), head_width);
      double batch_loss = 0.0;
      for (std::size_t r = 0; r < b; ++r) {
        const auto row = static_cast<Eigen::Index>(r);
        for (Eigen::Index c = 0; c < head_width; ++c) {
          row_head[static_cast<std::size_t>(c)] = head(row, c);
        }
        batch_loss += model.head_nll(row_head, sample.scores[order[start + r]], row_grad);
        for (Eigen::Index c = 0; c < head_width; ++c) {
          out_grad(row, c) = row_grad[static_cast<std::size_t>(c)] / static_cast<double>(b);
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorCode::numerical,
                    fmt::format("non-finite training loss at epoch {}", epoch), epoch);
      }
      epoch_loss += batch_loss;

      std::ranges::fill(grad, 0.0);
      nn::backward_batch(model.net(), cache, out_grad, grad);
      if (nn::clip_global_norm(grad, options.clip_norm) > options.clip_norm) {
        ++report.clipped_steps;
        logger().debug("gradient clipped at epoch {}", epoch);
      }
      try {
        nn::adam_step(adam, model.net().parameters(), grad);
      } catch (const Error& e) {
        throw Error(ErrorCode::numerical,
                    fmt::format("epoch {}: {}", epoch, e.what()), epoch);
      }
    }
    const auto params = model.net().parameters();
    if (!std::ranges::all_of(params, [](double v) { return std::isfinite(v); })) {
      throw Error(ErrorCode::numerical,
                  fmt::format("non-finite parameter after epoch {}", epoch), epoch);
    }
    const double mean_loss = epoch_loss / static_cast<double>(n_fit);
    report.loss_trace.push_back(mean_loss);
    if (!held_out.empty()) {
      const double v = validation_loss();
      report.validation_trace.push_back(v);
      if (v < best_validation) {
        best_validation = v;
        best_parameters.assign(params.begin(), params.end());
        report.best_epoch = epoch;
      }
    }
    if (options.on_epoch) options.on_epoch(epoch, mean_loss);
  }
  if (!best_parameters.empty()) {
    std::ranges::copy(best_parameters, model.net().parameters().begin());
    logger().debug("kept parameters of epoch {} (validation loss {})", report.best_epoch,
                   best_validation);
  }
  if (report.clipped_steps > 0) {
    logger().info("gradient clipping triggered on {} steps", report.clipped_steps);
  }

  const auto& trace = report.loss_trace;
  for (std::size_t e = 10; e < trace.size(); ++e) {
    if (trace[e] > trace[e - 10]) {
      report.window_monotone = false;
      logger().info("training loss rose over the 10-epoch window ending at epoch {} ({} -> {})",
                    e, trace[e - 10], trace[e]);
      break;
    }
  }

  TrainingProvenance provenance = sample.provenance;
  provenance.trained = options.epochs > 0;
  model.set_provenance(provenance);
  return report;
}

FitReport fit_mle(NeuralScoreModel& model, const Dataset& train, const NonconformityScore& score,
                  const FitOptions& options) {
  return fit_mle(model, make_score_sample(train, score), options);
}

std::unique_ptr<ConditionalScoreModel> load_model(const nlohmann::json& doc) {
  std::string variant;
  try {
    variant = doc.at("variant").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, fmt::format("model document has no variant: {}", e.what()));
  }
  if (variant == "mdn") return std::make_unique<MdnModel>(MdnModel::from_json(doc));
  if (variant == "spline_flow") {
    return std::make_unique<SplineFlowModel>(SplineFlowModel::from_json(doc));
  }
  if (variant == "oracle") {
    throw Error(ErrorCode::unsupported, "oracle models are closed forms and are not persisted");
  }
  throw Error(ErrorCode::io, fmt::format("unknown model variant '{}'", variant));
}

}  // namespace pivotal
