#include <doctest.h>

#include <cmath>

#include "pivotal/diagnostics.hpp"
#include "pivotal/error.hpp"
#include "pivotal/pit.hpp"
#include "pivotal/synth.hpp"

using namespace pivotal;

namespace {

std::shared_ptr<const ScoreFunction> absolute() {
  return std::make_shared<const ScoreFunction>(ScoreFunction::absolute_residual());
}

std::shared_ptr<const OracleModel> unit_half_normal() {
  return std::make_shared<const OracleModel>(
      OracleModel::half_normal_scale([](std::span<const double>) { return 1.0; }));
}

/// Model whose cdf is a fixed table lookup, for exact calibration examples.
class TableModel final : public ConditionalScoreModel {
 public:
  ModelVariant variant() const noexcept override { return ModelVariant::oracle; }
  double cdf(std::span<const double>, double s) const override { return std::clamp(s, 0.0, 1.0); }
  double log_density(std::span<const double>, double) const override { return 0.0; }
  double inverse_cdf(std::span<const double>, double u) const override { return u; }
  nlohmann::json to_json() const override { return {{"variant", "table"}}; }
};

Dataset calibration_of(std::vector<double> ys) {
  std::vector<LabeledSample> s;
  for (double y : ys) s.push_back({{0.0}, {y}});
  return Dataset(std::move(s), Role::calibration);
}

}  // namespace

TEST_CASE("corrected score examples") {
  const PitCorrectedScore half(absolute(), unit_half_normal());
  const double x[] = {0.0};
  const double zero[] = {0.0};
  CHECK(half.evaluate(x, zero) == 0.0);
  const double q[] = {1.959964};
  CHECK(std::abs(half.evaluate(x, q) - 0.9500000018071153) < 1e-12);

  const auto laplace = std::make_shared<const OracleModel>(
      synth::oracle_model(synth::DgpKind::laplace_het, ScoreKind::absolute_residual));
  const PitCorrectedScore expo(absolute(), laplace);
  const double one[] = {1.0};
  CHECK(std::abs(expo.evaluate(x, one) - 0.6321205588285577) < 1e-15);
  CHECK(expo.mode() == LatentMode::probability);
}

TEST_CASE("build_pipeline examples") {
  auto raw = std::make_shared<const ScoreFunction>(ScoreFunction::raw_response());
  const auto pipe = build_pipeline(raw, std::make_shared<const TableModel>(),
                                   calibration_of({0.1, 0.4, 0.6, 0.9}));
  CHECK(pipe.threshold(0.5).value() == 0.6);
  CHECK(pipe.threshold(0.5) <= pipe.threshold(0.2));
  CHECK(std::ranges::equal(pipe.corrected_scores(), std::vector<double>{0.1, 0.4, 0.6, 0.9}));
  const auto doc = pipe.to_json();
  CHECK(doc.at("sorted_corrected_scores").size() == 4);
}

TEST_CASE("build_pipeline enforces split roles") {
  const auto model = std::make_shared<OracleModel>(
      synth::oracle_model(synth::DgpKind::laplace_het, ScoreKind::absolute_residual));
  const Dataset data = synth::sample({synth::DgpKind::laplace_het, 1}, 50, 2, Role::calibration);
  CHECK_NOTHROW(build_pipeline(absolute(), model, data));
  CHECK_THROWS_AS(build_pipeline(absolute(), model, data.with_role(Role::train)), Error);

  auto fitted = std::make_shared<OracleModel>(*model);
  fitted->set_provenance({Role::calibration, data.fingerprint(), true});
  try {
    build_pipeline(absolute(), fitted, data);
    FAIL("expected a role violation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::role_violation);
  }
  auto same_data = std::make_shared<OracleModel>(*model);
  same_data->set_provenance({Role::train, data.fingerprint(), true});
  CHECK_THROWS_AS(build_pipeline(absolute(), same_data, data), Error);
}

TEST_CASE("oracle PIT values are uniform") {
  for (auto kind : {synth::DgpKind::laplace_het, synth::DgpKind::candy_gaussian}) {
    const Dataset cal = synth::sample({kind, 5}, 2000, 2, Role::calibration);
    auto base = std::make_shared<const ScoreFunction>(synth::base_score(kind, ScoreKind::absolute_residual));
    auto oracle = std::make_shared<const OracleModel>(synth::oracle_model(kind, ScoreKind::absolute_residual));
    const auto pipe = build_pipeline(base, oracle, cal);
    CHECK(ks_uniform_test_passes(pipe.corrected_scores(), 0.01));
  }
}

TEST_CASE("corrected regions keep the base geometry") {
  const auto kind = synth::DgpKind::candy_gaussian;
  const Dataset cal = synth::sample({kind, 6}, 500, 2, Role::calibration);
  auto oracle = std::make_shared<const OracleModel>(synth::oracle_model(kind, ScoreKind::absolute_residual));
  const auto pipe = build_pipeline(absolute(), oracle, cal);
  const auto ys = linspace(-5, 5, 2001);
  for (double x : {-0.9, -0.3, 0.0, 0.5, 0.71}) {
    const double xv[] = {x};
    for (double alpha : {0.05, 0.2, 0.5}) {
      const auto iv = corrected_intervals(pipe, xv, alpha);
      REQUIRE(iv.size() == 1);
      CHECK(iv[0].lo == doctest::Approx(-iv[0].hi).epsilon(1e-12));
      const double t = pipe.score().base_threshold(xv, pipe.threshold(alpha).value());
      const auto region = corrected_region(pipe, alpha);
      bool same = true;
      for (double y : ys) {
        const double yv[] = {y};
        same = same && (region_contains(region, xv, yv) == (std::abs(y) <= t));
      }
      CHECK(same);
    }
  }
}

TEST_CASE("flow latent and probability modes give identical membership") {
  const auto kind = synth::DgpKind::candy_gaussian;
  const Dataset train = synth::sample({kind, 7}, 1000, 1, Role::train);
  const Dataset cal = synth::sample({kind, 7}, 300, 2, Role::calibration);
  const Dataset test = synth::sample({kind, 7}, 300, 3, Role::test);
  const auto base = absolute();
  const auto sample = make_score_sample(train, *base);
  auto flow = std::make_shared<SplineFlowModel>(SplineFlowModel::create(sample, {}, 1));
  FitOptions options;
  options.epochs = 30;
  options.batch_size = 128;
  options.adam.learning_rate = 5e-3;
  fit_mle(*flow, sample, options);

  const auto latent = build_pipeline(base, flow, cal, LatentMode::flow_latent, 3);
  const auto prob = build_pipeline(base, flow, cal, LatentMode::probability, 3);
  std::size_t differences = 0;
  for (double alpha : uniform_alpha_grid()) {
    const auto a = latent.region(alpha), b = prob.region(alpha);
    for (const auto& s : test) {
      if (region_contains(a, s.features, s.outcome) != region_contains(b, s.features, s.outcome)) {
        ++differences;
      }
    }
  }
  CHECK(differences == 0);
}

TEST_CASE("corrected score is nondecreasing in the base score") {
  const auto kind = synth::DgpKind::laplace_het;
  const Dataset train = synth::sample({kind, 8}, 800, 1, Role::train);
  const auto sample = make_score_sample(train, ScoreFunction::absolute_residual());
  auto mdn = std::make_shared<MdnModel>(MdnModel::create(sample, {}, 1));
  FitOptions options;
  options.epochs = 10;
  fit_mle(*mdn, sample, options);
  const PitCorrectedScore corrected(absolute(), mdn);
  CounterRng rng(4);
  std::size_t violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const double x[] = {rng.uniform()};
    double a = rng.uniform(-1, 6), b = rng.uniform(-1, 6);
    if (a > b) std::swap(a, b);
    if (corrected.correct(x, a) > corrected.correct(x, b)) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("oracle conditional coverage on the toy process") {
  const auto kind = synth::DgpKind::candy_gaussian;
  const Dataset cal = synth::sample({kind, 0}, 1000, 2, Role::calibration);
  const Dataset test = synth::sample({kind, 0}, 5000, 3, Role::test);
  const KmeansModel bins = kmeans_fit(test, 10, 4);
  auto oracle = std::make_shared<const OracleModel>(synth::oracle_model(kind, ScoreKind::absolute_residual));
  const auto pipe = build_pipeline(absolute(), oracle, cal);
  const auto scores = evaluate_scores(pipe.score(), test);
  const double alpha = 0.2;
  const auto report = conditional_gap_mae(
      [&](std::size_t i, double a) { return pipe.threshold(a).admits(scores[i]); }, test, bins, alpha);
  for (const auto& b : report.bins) CHECK(std::abs(b.coverage - report.overall) <= 0.04);
  CHECK(report.gap < 0.06);
}

TEST_CASE("marginal validity holds for an untrained model") {
  const auto kind = synth::DgpKind::candy_gaussian;
  const Dataset train = synth::sample({kind, 9}, 200, 1, Role::train);
  const auto sample = make_score_sample(train, ScoreFunction::absolute_residual());
  auto flow = std::make_shared<const SplineFlowModel>(SplineFlowModel::create(sample, {}, 1));
  const PitCorrectedScore corrected(absolute(), flow);
  const auto est = marginal_coverage_trial(synth::sampler(kind), corrected, 99, 0.2, 2000, 3);
  const double band = 3 * std::sqrt(0.2 * 0.8 / 2000);
  CHECK(est.mean >= 0.8 - band);
  CHECK(est.mean <= 0.81 + band);
}
