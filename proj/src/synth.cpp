#include "pivotal/synth.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>

#include "pivotal/error.hpp"
#include "pivotal/normal.hpp"

namespace pivotal::synth {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void unsupported_score(ScoreKind score) {
  throw Error(ErrorCode::unsupported,
              fmt::format("no oracle for base score '{}'", to_string(score)));
}

double feature(std::span<const double> x) {
  PIVOTAL_REQUIRE(!x.empty(), ErrorCode::dimension_mismatch, "synthetic processes need p = 1");
  return x[0];
}

}  // namespace

std::string_view to_string(DgpKind kind) noexcept {
  return kind == DgpKind::laplace_het ? "laplace_het" : "candy_gaussian";
}

DgpKind dgp_kind_from_string(std::string_view name) {
  if (name == "laplace_het") return DgpKind::laplace_het;
  if (name == "candy_gaussian") return DgpKind::candy_gaussian;
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown data process '{}'", name));
}

double noise_scale(DgpKind kind, double x) {
  if (kind == DgpKind::laplace_het) return 1.0 / (x + 1.0);
  return std::abs(1.0 - 2.0 * x * x) + 0.1;
}

LabeledSample draw(DgpKind kind, CounterRng& rng) {
  if (kind == DgpKind::laplace_het) {
    const double x = rng.uniform();
    const double u = rng.uniform();
    const double b = noise_scale(kind, x);
    const double y = u < 0.5 ? b * std::log(2.0 * u) : -b * std::log(2.0 * (1.0 - u));
    return {{x}, {y}};
  }
  const double x = rng.uniform(-1.0, 1.0);
  return {{x}, {noise_scale(kind, x) * rng.normal()}};
}

SampleDraw sampler(DgpKind kind) {
  return [kind](CounterRng& rng) { return draw(kind, rng); };
}

Dataset sample(const DgpSpec& spec, std::size_t n, std::uint64_t tag, Role role) {
  const std::uint64_t key = derive_seed(spec.seed, tag);
  std::vector<LabeledSample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(key, i);
    samples.push_back(draw(spec.kind, rng));
  }
  return Dataset(std::move(samples), role);
}

double oracle_score_cdf(DgpKind kind, ScoreKind score, double x, double t) {
  const double b = noise_scale(kind, x);
  if (kind == DgpKind::laplace_het) {
    switch (score) {
      case ScoreKind::absolute_residual: return t <= 0.0 ? 0.0 : -std::expm1(-t / b);
      case ScoreKind::raw_response:
        return t < 0.0 ? 0.5 * std::exp(t / b) : 1.0 - 0.5 * std::exp(-t / b);
      case ScoreKind::negative_density:
        if (t >= 0.0) return 1.0;
        return std::max(0.0, 1.0 + 2.0 * b * t);
      default: unsupported_score(score);
    }
  }
  switch (score) {
    case ScoreKind::absolute_residual:
      return t <= 0.0 ? 0.0 : std::erf(t / (b * std::numbers::sqrt2));
    case ScoreKind::raw_response: return normal_cdf(t / b);
    case ScoreKind::negative_density: {
      if (t >= 0.0) return 1.0;
      const double ratio = -t * b * std::sqrt(2.0 * std::numbers::pi);
      if (ratio >= 1.0) return 0.0;
      const double r = std::sqrt(-2.0 * std::log(ratio));
      return std::erf(r / std::numbers::sqrt2);
    }
    default: unsupported_score(score);
  }
}

double oracle_score_log_density(DgpKind kind, ScoreKind score, double x, double t) {
  const double b = noise_scale(kind, x);
  if (kind == DgpKind::laplace_het) {
    switch (score) {
      case ScoreKind::absolute_residual: return t < 0.0 ? -kInf : -std::log(b) - t / b;
      case ScoreKind::raw_response: return -std::log(2.0 * b) - std::abs(t) / b;
      case ScoreKind::negative_density:
        return (t < -0.5 / b || t >= 0.0) ? -kInf : std::log(2.0 * b);
      default: unsupported_score(score);
    }
  }
  switch (score) {
    case ScoreKind::absolute_residual:
      return t < 0.0 ? -kInf : std::log(2.0) + normal_log_pdf(t / b) - std::log(b);
    case ScoreKind::raw_response: return normal_log_pdf(t / b) - std::log(b);
    case ScoreKind::negative_density: {
      const double ratio = -t * b * std::sqrt(2.0 * std::numbers::pi);
      if (t >= 0.0 || ratio >= 1.0) return -kInf;
      const double r = std::sqrt(-2.0 * std::log(ratio));
      return std::log(2.0 * b / r);
    }
    default: unsupported_score(score);
  }
}

double oracle_score_quantile(DgpKind kind, ScoreKind score, double x, double u) {
  PIVOTAL_REQUIRE(u >= 0.0 && u <= 1.0, ErrorCode::invalid_argument,
                  fmt::format("probability {} outside [0, 1]", u));
  const double b = noise_scale(kind, x);
  if (kind == DgpKind::laplace_het) {
    switch (score) {
      case ScoreKind::absolute_residual: return u >= 1.0 ? kInf : -b * std::log1p(-u);
      case ScoreKind::raw_response:
        return u < 0.5 ? b * std::log(2.0 * u) : -b * std::log(2.0 * (1.0 - u));
      case ScoreKind::negative_density: return (u - 1.0) / (2.0 * b);
      default: unsupported_score(score);
    }
  }
  switch (score) {
    case ScoreKind::absolute_residual: return b * normal_quantile(0.5 + 0.5 * u);
    case ScoreKind::raw_response: return b * normal_quantile(u);
    case ScoreKind::negative_density: {
      if (u >= 1.0) return 0.0;
      const double r = normal_quantile(0.5 + 0.5 * u);
      return -normal_pdf(r) / b;
    }
    default: unsupported_score(score);
  }
}

double oracle_marginal_cdf(DgpKind kind, double t) {
  if (t <= 0.0) return 0.0;
  if (kind == DgpKind::laplace_het) {
    if (t < 1e-4) return t * (1.5 + t * (-7.0 / 6.0 + t * 0.625));
    return 1.0 - (std::exp(-t) - std::exp(-2.0 * t)) / t;
  }
  // sigma(x) is even with kinks at 0 and 1/sqrt(2); integrate over [0, 1] piecewise.
  const auto integrand = [t](double x) {
    return std::erf(t / (noise_scale(DgpKind::candy_gaussian, x) * std::numbers::sqrt2));
  };
  using Rule = boost::math::quadrature::gauss_kronrod<double, 31>;
  const double kink = 1.0 / std::numbers::sqrt2;
  return Rule::integrate(integrand, 0.0, kink, 15, 1e-12) +
         Rule::integrate(integrand, kink, 1.0, 15, 1e-12);
}

double outcome_density(DgpKind kind, double x, double y) {
  const double b = noise_scale(kind, x);
  if (kind == DgpKind::laplace_het) return std::exp(-std::abs(y) / b) / (2.0 * b);
  return normal_pdf(y / b) / b;
}

OracleModel oracle_model(DgpKind kind, ScoreKind score) {
  if (score != ScoreKind::absolute_residual && score != ScoreKind::raw_response &&
      score != ScoreKind::negative_density) {
    unsupported_score(score);
  }
  if (score == ScoreKind::absolute_residual) {
    if (kind == DgpKind::laplace_het) {
      return OracleModel::exponential_rate([](std::span<const double> x) { return feature(x) + 1.0; });
    }
    return OracleModel::half_normal_scale(
        [](std::span<const double> x) { return noise_scale(DgpKind::candy_gaussian, feature(x)); });
  }
  return OracleModel::custom(
      fmt::format("{}:{}", to_string(kind), to_string(score)),
      [kind, score](std::span<const double> x, double t) {
        return oracle_score_cdf(kind, score, feature(x), t);
      },
      [kind, score](std::span<const double> x, double t) {
        return oracle_score_log_density(kind, score, feature(x), t);
      },
      [kind, score](std::span<const double> x, double u) {
        return oracle_score_quantile(kind, score, feature(x), u);
      });
}

ScoreFunction base_score(DgpKind kind, ScoreKind score) {
  switch (score) {
    case ScoreKind::absolute_residual: return ScoreFunction::absolute_residual();
    case ScoreKind::raw_response: return ScoreFunction::raw_response();
    case ScoreKind::negative_density:
      return ScoreFunction::negative_density(
          [kind](std::span<const double> x, std::span<const double> y) {
            return outcome_density(kind, feature(x), y[0]);
          });
    default: unsupported_score(score);
  }
}

}  // namespace pivotal::synth
