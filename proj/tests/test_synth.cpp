#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pivotal/error.hpp"
#include "pivotal/normal.hpp"
#include "pivotal/synth.hpp"

using namespace pivotal;
using synth::DgpKind;

TEST_CASE("sample shapes, ranges and determinism") {
  const auto a = synth::sample({DgpKind::laplace_het, 4}, 300, 1, Role::calibration);
  CHECK(a.size() == 300);
  CHECK(a.role() == Role::calibration);
  CHECK(a.feature_dim() == 1);
  CHECK(a.outcome_dim() == 1);
  for (const auto& s : a) CHECK((s.features[0] > 0.0 && s.features[0] < 1.0));
  CHECK(synth::sample({DgpKind::laplace_het, 4}, 300, 1).fingerprint() == a.fingerprint());
  CHECK(synth::sample({DgpKind::laplace_het, 4}, 300, 2).fingerprint() != a.fingerprint());
  CHECK(synth::sample({DgpKind::laplace_het, 5}, 300, 1).fingerprint() != a.fingerprint());

  const auto prefix = synth::sample({DgpKind::laplace_het, 4}, 10, 1);
  for (std::size_t i = 0; i < 10; ++i) CHECK(prefix[i].outcome[0] == a[i].outcome[0]);

  const auto c = synth::sample({DgpKind::candy_gaussian, 4}, 300);
  for (const auto& s : c) CHECK((s.features[0] > -1.0 && s.features[0] < 1.0));
}

TEST_CASE("noise scale examples") {
  CHECK(synth::noise_scale(DgpKind::laplace_het, 0.0) == 1.0);
  CHECK(synth::noise_scale(DgpKind::laplace_het, 1.0) == 0.5);
  CHECK(synth::noise_scale(DgpKind::candy_gaussian, 0.0) == doctest::Approx(1.1));
  CHECK(synth::noise_scale(DgpKind::candy_gaussian, 1.0) == doctest::Approx(1.1));
  CHECK(synth::noise_scale(DgpKind::candy_gaussian, std::sqrt(0.5)) == doctest::Approx(0.1));
}

TEST_CASE("oracle score cdf examples") {
  const auto abs = ScoreKind::absolute_residual;
  CHECK(synth::oracle_score_cdf(DgpKind::laplace_het, abs, 0.0, 1.0) ==
        doctest::Approx(0.6321205588285577).epsilon(1e-14));
  CHECK(synth::oracle_score_cdf(DgpKind::laplace_het, abs, 0.025, 1.0) ==
        doctest::Approx(0.6412035345940483).epsilon(1e-14));
  CHECK(synth::oracle_score_cdf(DgpKind::laplace_het, ScoreKind::raw_response, 0.3, 0.0) == 0.5);
  CHECK(synth::oracle_score_cdf(DgpKind::candy_gaussian, abs, std::sqrt(0.5), 0.1959964) ==
        doctest::Approx(0.9500000018071153).epsilon(1e-9));
  CHECK(synth::oracle_score_cdf(DgpKind::candy_gaussian, ScoreKind::raw_response, 0.0,
                                1.1 * 1.959964) == doctest::Approx(0.9750000009035577).epsilon(1e-9));
  CHECK(synth::oracle_score_quantile(DgpKind::candy_gaussian, ScoreKind::raw_response, 0.0, 0.975) ==
        doctest::Approx(1.1 * 1.959963984540054).epsilon(1e-9));
  CHECK_THROWS_AS(synth::oracle_score_cdf(DgpKind::laplace_het, ScoreKind::scaled_linf_residual, 0, 1),
                  Error);
}

TEST_CASE("oracle cdfs are monotone and invert") {
  const ScoreKind kinds[] = {ScoreKind::absolute_residual, ScoreKind::raw_response,
                             ScoreKind::negative_density};
  for (const auto kind : {DgpKind::laplace_het, DgpKind::candy_gaussian}) {
    for (const auto score : kinds) {
      for (double x : {0.0, 0.3, 0.9}) {
        double prev = 0.0;
        for (int i = -400; i <= 400; ++i) {
          const double t = i / 40.0;
          const double f = synth::oracle_score_cdf(kind, score, x, t);
          CHECK(f >= prev);
          CHECK((f >= 0.0 && f <= 1.0));
          prev = f;
        }
        for (double u : {0.05, 0.3, 0.5, 0.8, 0.99}) {
          const double q = synth::oracle_score_quantile(kind, score, x, u);
          CHECK(synth::oracle_score_cdf(kind, score, x, q) == doctest::Approx(u).epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("marginal cdf examples") {
  CHECK(synth::oracle_marginal_cdf(DgpKind::laplace_het, 1.0) ==
        doctest::Approx(0.7674558420651704).epsilon(1e-12));
  CHECK(synth::oracle_marginal_cdf(DgpKind::laplace_het, 10.0) ==
        doctest::Approx(0.9999954602131391).epsilon(1e-12));
  CHECK(synth::oracle_marginal_cdf(DgpKind::laplace_het, 0.0) == 0.0);
  CHECK(synth::oracle_marginal_cdf(DgpKind::laplace_het, 1e-9) == doctest::Approx(1.5e-9).epsilon(1e-6));
}

TEST_CASE("marginal cdf equals the x-average of the conditional cdf") {
  for (const auto kind : {DgpKind::laplace_het, DgpKind::candy_gaussian}) {
    const double lo = kind == DgpKind::laplace_het ? 0.0 : -1.0;
    const double hi = 1.0;
    constexpr int panels = 40000;
    for (int k = 1; k <= 20; ++k) {
      const double t = 0.15 * k;
      double sum = 0.0;
      const double h = (hi - lo) / panels;
      for (int i = 0; i <= panels; ++i) {
        const double w = (i == 0 || i == panels) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        sum += w * synth::oracle_score_cdf(kind, ScoreKind::absolute_residual, lo + i * h, t);
      }
      const double average = sum * h / 3.0 / (hi - lo);
      CHECK(std::abs(synth::oracle_marginal_cdf(kind, t) - average) < 1e-5);
    }
  }
}

TEST_CASE("sampled |Y| stays inside the DKW band around the marginal") {
  constexpr std::size_t n = 5000;
  const double band = std::sqrt(std::log(2.0 / 1e-3) / (2.0 * n));
  for (const auto kind : {DgpKind::laplace_het, DgpKind::candy_gaussian}) {
    const auto data = synth::sample({kind, 8}, n);
    std::vector<double> s;
    for (const auto& d : data) s.push_back(std::abs(d.outcome[0]));
    std::ranges::sort(s);
    double sup = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double f = synth::oracle_marginal_cdf(kind, s[i]);
      sup = std::max({sup, std::abs(f - static_cast<double>(i) / n), std::abs(f - (i + 1.0) / n)});
    }
    CHECK(sup < band);
  }
}

TEST_CASE("outcome density and oracle model agree") {
  const auto model = synth::oracle_model(DgpKind::candy_gaussian, ScoreKind::raw_response);
  const std::vector<double> x = {0.2};
  const double sigma = synth::noise_scale(DgpKind::candy_gaussian, 0.2);
  CHECK(std::exp(model.log_density(x, 0.4)) == doctest::Approx(normal_pdf(0.4 / sigma) / sigma));
  CHECK(synth::outcome_density(DgpKind::candy_gaussian, 0.2, 0.4) ==
        doctest::Approx(normal_pdf(0.4 / sigma) / sigma));
  CHECK(synth::outcome_density(DgpKind::laplace_het, 0.0, 0.0) == doctest::Approx(0.5));
  CHECK(synth::dgp_kind_from_string("candy_gaussian") == DgpKind::candy_gaussian);
  CHECK_THROWS_AS(synth::dgp_kind_from_string("nope"), Error);
}
