#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

#include "pivotal/conformal.hpp"
#include "pivotal/density.hpp"
#include "pivotal/random.hpp"
#include "pivotal/scores.hpp"

namespace pivotal::synth {

/// laplace_het:    X ~ U(0, 1),  Y | x ~ Laplace(0, 1 / (x + 1)).
/// candy_gaussian: X ~ U(-1, 1), Y | x ~ N(0, sigma(x)^2), sigma(x) = |1 - 2x^2| + 0.1.
enum class DgpKind { laplace_het, candy_gaussian };

std::string_view to_string(DgpKind kind) noexcept;
DgpKind dgp_kind_from_string(std::string_view name);

struct DgpSpec {
  DgpKind kind = DgpKind::candy_gaussian;
  std::uint64_t seed = 0;
};

/// Laplace scale b(x) or Gaussian standard deviation sigma(x).
double noise_scale(DgpKind kind, double x);

/// One draw by inverse-CDF sampling.
LabeledSample draw(DgpKind kind, CounterRng& rng);
SampleDraw sampler(DgpKind kind);

/// n draws; draw i uses its own counter stream under the (seed, tag) key, so
/// different tags give independent datasets and parallel generation is exact.
Dataset sample(const DgpSpec& spec, std::size_t n, std::uint64_t tag = 0,
               Role role = Role::train);

/// True conditional law of the base score kind at x. Supported: absolute and
/// raw residuals for both processes, and the negative oracle density.
double oracle_score_cdf(DgpKind kind, ScoreKind score, double x, double t);
double oracle_score_log_density(DgpKind kind, ScoreKind score, double x, double t);
double oracle_score_quantile(DgpKind kind, ScoreKind score, double x, double u);

/// Marginal CDF of |Y|. Closed form with a series near 0 for laplace_het;
/// adaptive Gauss-Kronrod over x for candy_gaussian.
double oracle_marginal_cdf(DgpKind kind, double t);

/// p(y | x) of the generating process.
double outcome_density(DgpKind kind, double x, double y);

/// Oracle conditional score model (closed form) for the given base score.
OracleModel oracle_model(DgpKind kind, ScoreKind score);

/// The base score of the given kind with f = 0 and the true density where needed.
ScoreFunction base_score(DgpKind kind, ScoreKind score);

}  // namespace pivotal::synth
