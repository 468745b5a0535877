#include "pivotal/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "pivotal/error.hpp"
#include "pivotal/log.hpp"
#include "pivotal/parallel.hpp"
#include "pivotal/pit.hpp"

namespace pivotal {

namespace {

[[noreturn]] void field_error(std::string_view key, const std::string& message) {
  throw Error(ErrorCode::config, fmt::format("field '{}': {}", key, message));
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  s = trim(s);
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::uint64_t parse_unsigned(std::string_view key, std::string_view text) {
  text = trim(text);
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    field_error(key, fmt::format("expected a non-negative integer, got '{}'", text));
  }
  return value;
}

double parse_real(std::string_view key, std::string_view text) {
  text = trim(text);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty() ||
      !std::isfinite(value)) {
    field_error(key, fmt::format("expected a finite number, got '{}'", text));
  }
  return value;
}

template <class T, class Parse>
std::vector<T> parse_list(std::string_view key, std::string_view text, Parse parse) {
  std::vector<T> out;
  for (auto item : split_list(text)) out.push_back(parse(key, item));
  return out;
}

template <class F>
auto parse_enum(std::string_view key, std::string_view text, F from_string) {
  try {
    return from_string(trim(text));
  } catch (const Error&) {
    field_error(key, fmt::format("unknown value '{}'", trim(text)));
  }
}

std::string join_numbers(const auto& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += fmt::format("{}", values[i]);
  }
  return out;
}

std::string join_models(const std::vector<ModelVariant>& models) {
  std::string out;
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (i) out += ',';
    out += to_string(models[i]);
  }
  return out;
}

std::string json_value_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ',';
      out += json_value_text(v[i]);
    }
    return out;
  }
  return v.dump();
}

/// Files of one run; written together with a manifest of their hashes.
class OutputSet {
 public:
  void add(std::string name, std::string content) {
    files_.emplace_back(std::move(name), std::move(content));
  }

  void commit(const ExperimentConfig& config) const {
    if (config.output_dir.empty()) return;
    std::filesystem::create_directories(config.output_dir);
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& [name, content] : files_) {
      const auto path = config.output_dir / name;
      std::ofstream out(path, std::ios::binary);
      PIVOTAL_REQUIRE(out.good(), ErrorCode::io, fmt::format("cannot write {}", path.string()));
      out << content;
      hashes[name] = sha256_hex(content);
    }
    const nlohmann::json manifest = {{"version", std::string(kVersion)},
                                     {"experiment", std::string(to_string(config.experiment))},
                                     {"seed", config.seed},
                                     {"config", to_json(config)},
                                     {"outputs", std::move(hashes)}};
    const auto path = config.output_dir / "manifest.json";
    std::ofstream out(path, std::ios::binary);
    PIVOTAL_REQUIRE(out.good(), ErrorCode::io, fmt::format("cannot write {}", path.string()));
    out << manifest.dump(2) << '\n';
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<double> scores_of(const NonconformityScore& score, const Dataset& data) {
  return evaluate_scores(score, data);
}

// Split tags of the generated datasets.
constexpr std::uint64_t kTrainTag = 1;
constexpr std::uint64_t kCalibrationTag = 2;
constexpr std::uint64_t kTestTag = 3;
constexpr std::uint64_t kBinTag = 4;

}  // namespace

std::string_view to_string(ExperimentKind kind) noexcept {
  switch (kind) {
    case ExperimentKind::toy: return "toy";
    case ExperimentKind::convergence: return "convergence";
    case ExperimentKind::illustration_ks: return "illustration_ks";
    case ExperimentKind::marginal_check: return "marginal_check";
  }
  return "unknown";
}

ExperimentKind experiment_kind_from_string(std::string_view name) {
  if (name == "toy") return ExperimentKind::toy;
  if (name == "convergence") return ExperimentKind::convergence;
  if (name == "illustration_ks" || name == "illustration-ks") return ExperimentKind::illustration_ks;
  if (name == "marginal_check" || name == "marginal-check") return ExperimentKind::marginal_check;
  throw Error(ErrorCode::config, fmt::format("unknown experiment '{}'", name));
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.experiment = kind;
  switch (kind) {
    case ExperimentKind::toy: break;
    case ExperimentKind::convergence: break;
    case ExperimentKind::illustration_ks:
      c.dgp = synth::DgpKind::laplace_het;
      c.n_calibration = 99;
      c.model = ModelVariant::oracle;
      break;
    case ExperimentKind::marginal_check:
      c.n_calibration = 99;
      c.n_train = 2000;
      break;
  }
  return c;
}

void apply_setting(ExperimentConfig& c, std::string_view key, std::string_view value) {
  key = trim(key);
  const auto count = [&] { return static_cast<std::size_t>(parse_unsigned(key, value)); };
  if (key == "experiment") {
    const auto kind = parse_enum(key, value, experiment_kind_from_string);
    if (kind != c.experiment) {
      field_error(key, fmt::format("file is for '{}' but '{}' was requested", to_string(kind),
                                   to_string(c.experiment)));
    }
  } else if (key == "dgp") {
    c.dgp = parse_enum(key, value, synth::dgp_kind_from_string);
  } else if (key == "n_train") {
    c.n_train = count();
  } else if (key == "n_calibration") {
    c.n_calibration = count();
  } else if (key == "n_test") {
    c.n_test = count();
  } else if (key == "alphas") {
    c.alphas = parse_list<double>(key, value, parse_real);
  } else if (key == "model") {
    c.model = parse_enum(key, value, model_variant_from_string);
  } else if (key == "score") {
    c.score = parse_enum(key, value, [](std::string_view v) { return score_kind_from_string(v); });
  } else if (key == "epochs") {
    c.epochs = count();
  } else if (key == "batch_size") {
    c.batch_size = count();
  } else if (key == "learning_rate") {
    c.learning_rate = parse_real(key, value);
  } else if (key == "lr_final_fraction") {
    c.lr_final_fraction = parse_real(key, value);
  } else if (key == "validation_fraction") {
    c.validation_fraction = parse_real(key, value);
  } else if (key == "hidden") {
    c.hidden = parse_list<std::size_t>(key, value, parse_unsigned);
  } else if (key == "components") {
    c.components = count();
  } else if (key == "spline_bins") {
    c.spline_bins = count();
  } else if (key == "n_runs") {
    c.n_runs = count();
  } else if (key == "train_ladder") {
    c.train_ladder = parse_list<std::size_t>(key, value, parse_unsigned);
  } else if (key == "ladder_models") {
    c.ladder_models.clear();
    for (auto item : split_list(value)) {
      c.ladder_models.push_back(parse_enum(key, item, model_variant_from_string));
    }
  } else if (key == "repetitions") {
    c.repetitions = count();
  } else if (key == "trials") {
    c.trials = count();
  } else if (key == "feature_bins") {
    c.feature_bins = count();
  } else if (key == "alpha_levels") {
    c.alpha_levels = count();
  } else if (key == "grid_points") {
    c.grid_points = count();
  } else if (key == "x_values") {
    c.x_values = parse_list<double>(key, value, parse_real);
  } else if (key == "seed") {
    c.seed = parse_unsigned(key, value);
  } else if (key == "output_dir") {
    c.output_dir = std::string(trim(value));
  } else {
    throw Error(ErrorCode::config, fmt::format("unknown field '{}'", key));
  }
}

ExperimentConfig parse_config(std::istream& in, ExperimentKind kind) {
  ExperimentConfig config = default_config(kind);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, fmt::format("malformed JSON configuration: {}", e.what()));
    }
    const auto& fields = doc.contains("config") ? doc.at("config") : doc;
    PIVOTAL_REQUIRE(fields.is_object(), ErrorCode::config, "configuration must be an object");
    for (const auto& [key, value] : fields.items()) apply_setting(config, key, json_value_text(value));
    return config;
  }
  std::istringstream lines{std::string(body)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(lines, line)) {
    ++number;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::config, fmt::format("line {}: expected key = value", number));
    }
    apply_setting(config, view.substr(0, eq), view.substr(eq + 1));
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentKind kind) {
  std::ifstream in(path);
  PIVOTAL_REQUIRE(in.good(), ErrorCode::config,
                  fmt::format("cannot open configuration {}", path.string()));
  return parse_config(in, kind);
}

void validate(const ExperimentConfig& c) {
  const auto at_least = [](std::string_view key, std::size_t value, std::size_t minimum) {
    if (value < minimum) field_error(key, fmt::format("must be at least {}, got {}", minimum, value));
  };
  at_least("n_calibration", c.n_calibration, 1);
  at_least("n_test", c.n_test, 1);
  at_least("n_runs", c.n_runs, 1);
  at_least("repetitions", c.repetitions, 1);
  at_least("trials", c.trials, 2);
  at_least("feature_bins", c.feature_bins, 2);
  at_least("alpha_levels", c.alpha_levels, 1);
  at_least("grid_points", c.grid_points, 2);
  at_least("components", c.components, 1);
  at_least("spline_bins", c.spline_bins, 1);
  if (c.alphas.empty()) field_error("alphas", "at least one level is required");
  for (double a : c.alphas) {
    if (!(a > 0.0 && a < 1.0)) field_error("alphas", fmt::format("{} is outside (0, 1)", a));
  }
  if (!(c.learning_rate > 0.0)) field_error("learning_rate", "must be positive");
  if (!(c.lr_final_fraction > 0.0 && c.lr_final_fraction <= 1.0)) {
    field_error("lr_final_fraction", "must lie in (0, 1]");
  }
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    field_error("validation_fraction", "must lie in [0, 1)");
  }
  for (auto h : c.hidden) {
    if (h == 0) field_error("hidden", "layer widths must be positive");
  }
  const bool learned = c.model != ModelVariant::oracle;
  if ((c.experiment == ExperimentKind::toy || c.experiment == ExperimentKind::marginal_check) &&
      learned && c.n_train == 0) {
    field_error("n_train", fmt::format("model '{}' needs fitting data, got 0", to_string(c.model)));
  }
  if (c.experiment == ExperimentKind::toy && c.feature_bins > c.n_test) {
    field_error("feature_bins", "more bins than test points");
  }
  if (c.experiment == ExperimentKind::convergence) {
    if (c.train_ladder.empty()) field_error("train_ladder", "at least one rung is required");
    if (c.ladder_models.empty()) field_error("ladder_models", "at least one model is required");
    for (auto m : c.ladder_models) {
      if (m == ModelVariant::oracle) field_error("ladder_models", "only learned models train");
    }
  }
  if (c.experiment == ExperimentKind::illustration_ks) {
    if (c.dgp != synth::DgpKind::laplace_het) field_error("dgp", "illustration_ks uses laplace_het");
    if (c.x_values.empty()) field_error("x_values", "at least one feature value is required");
    for (double x : c.x_values) {
      if (!(x >= 0.0 && x <= 1.0)) field_error("x_values", fmt::format("{} is outside [0, 1]", x));
    }
  }
  if (c.experiment == ExperimentKind::marginal_check &&
      c.score == ScoreKind::scaled_linf_residual) {
    field_error("score", "synthetic processes have no oracle for scaled_linf_residual");
  }
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"experiment", std::string(to_string(c.experiment))},
          {"dgp", std::string(synth::to_string(c.dgp))},
          {"n_train", c.n_train},
          {"n_calibration", c.n_calibration},
          {"n_test", c.n_test},
          {"alphas", c.alphas},
          {"model", std::string(to_string(c.model))},
          {"score", std::string(to_string(c.score))},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"lr_final_fraction", c.lr_final_fraction},
          {"validation_fraction", c.validation_fraction},
          {"hidden", c.hidden},
          {"components", c.components},
          {"spline_bins", c.spline_bins},
          {"n_runs", c.n_runs},
          {"train_ladder", c.train_ladder},
          {"ladder_models", join_models(c.ladder_models)},
          {"repetitions", c.repetitions},
          {"trials", c.trials},
          {"feature_bins", c.feature_bins},
          {"alpha_levels", c.alpha_levels},
          {"grid_points", c.grid_points},
          {"x_values", c.x_values},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()}};
}

std::string to_key_value(const ExperimentConfig& c) {
  const nlohmann::json doc = to_json(c);
  std::string out;
  for (const auto& [key, value] : doc.items()) {
    out += fmt::format("{} = {}\n", key, json_value_text(value));
  }
  return out;
}

FitOptions fit_options(const ExperimentConfig& config, std::uint64_t seed) {
  FitOptions options;
  options.epochs = config.epochs;
  options.batch_size = config.batch_size;
  options.adam.learning_rate = config.learning_rate;
  options.final_rate_fraction = config.lr_final_fraction;
  options.validation_fraction = config.validation_fraction;
  options.seed = seed;
  return options;
}

std::shared_ptr<ConditionalScoreModel> train_model(const ExperimentConfig& config,
                                                   ModelVariant variant, const Dataset& train,
                                                   ScoreKind score, std::uint64_t seed) {
  if (variant == ModelVariant::oracle) {
    return std::make_shared<OracleModel>(synth::oracle_model(config.dgp, score));
  }
  const ScoreFunction base = synth::base_score(config.dgp, score);
  const ScoreSample sample = make_score_sample(train, base);
  std::shared_ptr<NeuralScoreModel> model;
  if (variant == ModelVariant::mdn) {
    MdnOptions options;
    options.components = config.components;
    options.hidden = config.hidden;
    model = std::make_shared<MdnModel>(MdnModel::create(sample, options, seed));
  } else {
    SplineFlowOptions options;
    options.shape.bins = config.spline_bins;
    options.hidden = config.hidden;
    model = std::make_shared<SplineFlowModel>(SplineFlowModel::create(sample, options, seed));
  }
  fit_mle(*model, sample, fit_options(config, derive_seed(seed, 0xF1)));
  return model;
}

std::vector<Interval> scan_region(const NonconformityScore& score, const Threshold& threshold,
                                  std::span<const double> x, std::span<const double> y_grid) {
  std::vector<Interval> out;
  bool open = false;
  double y_out[1];
  for (std::size_t i = 0; i < y_grid.size(); ++i) {
    y_out[0] = y_grid[i];
    const bool inside = threshold.admits(score.evaluate(x, y_out));
    if (inside && !open) {
      out.push_back({y_grid[i], y_grid[i]});
      open = true;
    } else if (inside) {
      out.back().hi = y_grid[i];
    } else {
      open = false;
    }
  }
  return out;
}

const ConvergenceRow& ConvergenceResult::row(std::string_view model, std::size_t n_train) const {
  for (const auto& r : rows) {
    if (r.model == model && r.n_train == n_train) return r;
  }
  throw Error(ErrorCode::invalid_argument,
              fmt::format("no convergence row for ({}, {})", model, n_train));
}

// ---------------------------------------------------------------- toy

ToyResult run_toy(const ExperimentConfig& config) {
  validate(config);
  const synth::DgpSpec spec{config.dgp, config.seed};
  const Dataset train = synth::sample(spec, config.n_train, kTrainTag, Role::train);
  const Dataset calibration = synth::sample(spec, config.n_calibration, kCalibrationTag,
                                            Role::calibration);
  const Dataset test = synth::sample(spec, config.n_test, kTestTag, Role::test);
  const KmeansModel bins = kmeans_fit(test, config.feature_bins, derive_seed(config.seed, kBinTag));
  const auto bin_of = assign_bins(bins, test);

  const double x_lo = config.dgp == synth::DgpKind::laplace_het ? 0.0 : -1.0;
  const auto x_grid = linspace(x_lo, 1.0, config.grid_points);
  double widest = 0.0;
  for (double x : x_grid) widest = std::max(widest, synth::noise_scale(config.dgp, x));
  const auto y_grid = linspace(-5.0 * widest, 5.0 * widest, 801);

  const std::pair<ScoreKind, double> pairs[] = {{ScoreKind::absolute_residual, 0.3},
                                                {ScoreKind::negative_density, 0.2},
                                                {ScoreKind::raw_response, 0.1}};
  ToyResult result;
  std::string membership = "score,alpha,pipeline,index,x,y,covered\n";
  std::string bin_rows = "score,alpha,pipeline,bin,count,coverage,target\n";
  std::string summary = "score,alpha,pipeline,overall,mae,gap\n";
  std::string boundaries = "score,alpha,pipeline,x,interval,lo,hi\n";
  OutputSet outputs;

  for (std::size_t c = 0; c < std::size(pairs); ++c) {
    const auto [kind, alpha] = pairs[c];
    const auto name = to_string(kind);
    auto base = std::make_shared<const ScoreFunction>(synth::base_score(config.dgp, kind));
    const auto model = train_model(config, config.model, train, kind, derive_seed(config.seed, 10 + c));
    const SplitConformal base_pipe(base, calibration, derive_seed(config.seed, 20 + c));
    const PitPipeline pit_pipe = build_pipeline(base, model, calibration, std::nullopt,
                                                derive_seed(config.seed, 30 + c));

    struct Variant {
      std::string_view label;
      std::shared_ptr<const NonconformityScore> score;
      Threshold threshold;
    };
    const Variant variants[] = {{"base", base, base_pipe.threshold(alpha)},
                                {"corrected", pit_pipe.score_ptr(), pit_pipe.threshold(alpha)}};
    ToyCase toy{kind, alpha, {}, {}};
    for (const auto& v : variants) {
      const auto scores = scores_of(*v.score, test);
      const Threshold t = v.threshold;
      const Membership contains = [&scores, t](std::size_t i, double) { return t.admits(scores[i]); };
      GapReport report = conditional_gap_mae(contains, bin_of, bins.bin_count(), alpha);
      for (std::size_t i = 0; i < test.size(); ++i) {
        membership += fmt::format("{},{},{},{},{},{},{}\n", name, alpha, v.label, i,
                                  test[i].features[0], test[i].outcome[0],
                                  t.admits(scores[i]) ? 1 : 0);
      }
      for (const auto& b : report.bins) {
        bin_rows += fmt::format("{},{},{},{},{},{},{}\n", name, alpha, v.label, b.bin, b.count,
                                b.coverage, 1.0 - alpha);
      }
      summary += fmt::format("{},{},{},{},{},{}\n", name, alpha, v.label, report.overall,
                             report.mae, report.gap);
      for (double x : x_grid) {
        const double xs[] = {x};
        const auto intervals = scan_region(*v.score, t, xs, y_grid);
        for (std::size_t k = 0; k < intervals.size(); ++k) {
          boundaries += fmt::format("{},{},{},{},{},{},{}\n", name, alpha, v.label, x, k,
                                    intervals[k].lo, intervals[k].hi);
        }
      }
      (v.label == "base" ? toy.base : toy.corrected) = std::move(report);
    }
    if (model->variant() != ModelVariant::oracle) {
      outputs.add(fmt::format("toy_model_{}.json", name), model->to_json().dump() + "\n");
    }
    logger().info("toy {} alpha={}: base MAE {:.4f}, corrected MAE {:.4f}", name, alpha,
                  toy.base.mae, toy.corrected.mae);
    result.cases.push_back(std::move(toy));
  }
  outputs.add("toy_membership.csv", std::move(membership));
  outputs.add("toy_bins.csv", std::move(bin_rows));
  outputs.add("toy_summary.csv", std::move(summary));
  outputs.add("toy_boundaries.csv", std::move(boundaries));
  outputs.commit(config);
  return result;
}

// ---------------------------------------------------------------- convergence

ConvergenceResult run_convergence(const ExperimentConfig& config) {
  validate(config);
  const auto alphas = uniform_alpha_grid(config.alpha_levels);
  const std::size_t largest = *std::ranges::max_element(config.train_ladder);
  const std::size_t models = config.ladder_models.size();
  const std::size_t rungs = config.train_ladder.size();
  // gaps[run][model][rung]
  std::vector<double> gaps(config.n_runs * models * rungs, 0.0);

  parallel_for(config.n_runs, [&](std::size_t run) {
    const std::uint64_t run_seed = derive_seed(config.seed, 1000 + run);
    const synth::DgpSpec spec{config.dgp, run_seed};
    const Dataset pool = synth::sample(spec, largest, kTrainTag, Role::train);
    const Dataset calibration = synth::sample(spec, config.n_calibration, kCalibrationTag,
                                              Role::calibration);
    const Dataset test = synth::sample(spec, config.n_test, kTestTag, Role::test);
    const KmeansModel bins = kmeans_fit(test, config.feature_bins, derive_seed(run_seed, kBinTag));
    const auto bin_of = assign_bins(bins, test);

    auto base = std::make_shared<const ScoreFunction>(synth::base_score(config.dgp, config.score));
    const SplitConformal base_pipe(base, calibration, derive_seed(run_seed, 5));
    const auto base_scores = scores_of(*base, test);
    const double baseline = l1_gap_over_grid(
        [&](std::size_t i, double a) { return base_pipe.threshold(a).admits(base_scores[i]); },
        bin_of, bins.bin_count(), alphas);

    for (std::size_t m = 0; m < models; ++m) {
      for (std::size_t r = 0; r < rungs; ++r) {
        const std::size_t n_train = config.train_ladder[r];
        double gap = baseline;
        if (n_train > 0) {
          const Dataset train(std::vector<LabeledSample>(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train)),
                              Role::train);
          const auto model = train_model(config, config.ladder_models[m], train, config.score,
                                         derive_seed(run_seed, 100 + 10 * m + r));
          const PitPipeline pipe = build_pipeline(base, model, calibration, std::nullopt,
                                                  derive_seed(run_seed, 6));
          const auto scores = scores_of(pipe.score(), test);
          gap = l1_gap_over_grid(
              [&](std::size_t i, double a) { return pipe.threshold(a).admits(scores[i]); },
              bin_of, bins.bin_count(), alphas);
        }
        gaps[(run * models + m) * rungs + r] = gap;
        logger().info("convergence run {} {} N={}: L1 gap {:.4f}", run,
                      to_string(config.ladder_models[m]), n_train, gap);
      }
    }
  });

  ConvergenceResult result;
  std::string runs_csv = "model,n_train,run,l1_gap\n";
  std::string summary_csv = "model,n_train,mean,sd,runs\n";
  for (std::size_t m = 0; m < models; ++m) {
    const std::string name(to_string(config.ladder_models[m]));
    for (std::size_t r = 0; r < rungs; ++r) {
      ConvergenceRow row{name, config.train_ladder[r], 0.0, 0.0, {}};
      for (std::size_t run = 0; run < config.n_runs; ++run) {
        const double g = gaps[(run * models + m) * rungs + r];
        row.runs.push_back(g);
        runs_csv += fmt::format("{},{},{},{}\n", name, row.n_train, run, g);
      }
      row.mean = mean_of(row.runs);
      row.sd = sd_of(row.runs);
      summary_csv += fmt::format("{},{},{},{},{}\n", name, row.n_train, row.mean, row.sd,
                                 row.runs.size());
      result.rows.push_back(std::move(row));
    }
    for (std::size_t r = 1; r < rungs; ++r) {
      const auto& prev = result.rows[result.rows.size() - rungs + r - 1];
      const auto& cur = result.rows[result.rows.size() - rungs + r];
      if (cur.n_train > prev.n_train && cur.mean > prev.mean + prev.sd) {
        logger().info("{}: gap at N={} exceeds N={} by more than one sd", name, cur.n_train,
                      prev.n_train);
      }
    }
  }
  OutputSet outputs;
  outputs.add("convergence_runs.csv", std::move(runs_csv));
  outputs.add("convergence_summary.csv", std::move(summary_csv));
  outputs.commit(config);
  return result;
}

// ---------------------------------------------------------------- illustration

IllustrationResult run_illustration_ks(const ExperimentConfig& config) {
  validate(config);
  const auto kind = config.dgp;
  const auto conditional = [kind](double x, double t) {
    return synth::oracle_score_cdf(kind, ScoreKind::absolute_residual, x, t);
  };
  const auto marginal = [kind](double t) { return synth::oracle_marginal_cdf(kind, t); };

  const auto t_grid = linspace(0.0, 10.0, 201);
  std::string curves = "x,t,conditional_cdf,marginal_cdf\n";
  for (double x : linspace(0.0, 1.0, 11)) {
    for (double t : t_grid) {
      curves += fmt::format("{},{},{},{}\n", x, t, conditional(x, t), marginal(t));
    }
  }

  const auto alphas = uniform_alpha_grid(config.alpha_levels);
  const ScoreFunction score = synth::base_score(kind, ScoreKind::absolute_residual);
  const auto mc = conditional_gap_mc(synth::sampler(kind), score, conditional, marginal,
                                     config.x_values, config.n_calibration, alphas, config.trials,
                                     derive_seed(config.seed, 7));
  const auto coarse = linspace(0.0, 10.0, 101);
  IllustrationResult result;
  std::string summary = "x,d_ks,mc_gap,mc_stderr,alpha_at_max,bound_holds\n";
  for (std::size_t i = 0; i < config.x_values.size(); ++i) {
    const double x = config.x_values[i];
    const double d = ks_distance_functions([&](double t) { return conditional(x, t); }, marginal,
                                           coarse);
    const KsRow row{x, d, mc[i].gap, mc[i].standard_error, mc[i].alpha_at_max};
    summary += fmt::format("{},{},{},{},{},{}\n", x, d, row.mc_gap, row.mc_standard_error,
                           row.alpha_at_max, row.mc_gap <= d + 3.0 * row.mc_standard_error ? 1 : 0);
    result.rows.push_back(row);
  }
  OutputSet outputs;
  outputs.add("ks_curves.csv", std::move(curves));
  outputs.add("ks_summary.csv", std::move(summary));
  outputs.commit(config);
  return result;
}

// ---------------------------------------------------------------- marginal validity

MarginalResult run_marginal_check(const ExperimentConfig& config) {
  validate(config);
  const synth::DgpSpec spec{config.dgp, config.seed};
  auto base = std::make_shared<const ScoreFunction>(synth::base_score(config.dgp, config.score));
  std::shared_ptr<ConditionalScoreModel> model;
  if (config.model == ModelVariant::oracle) {
    model = train_model(config, config.model, Dataset(), config.score, 0);
  } else {
    const Dataset train = synth::sample(spec, config.n_train, kTrainTag, Role::train);
    model = train_model(config, config.model, train, config.score, derive_seed(config.seed, 11));
  }
  const auto corrected = std::make_shared<const PitCorrectedScore>(base, model);
  const auto draw = synth::sampler(config.dgp);
  const std::uint64_t trial_seed = derive_seed(config.seed, 12);

  MarginalResult result;
  std::string csv = "alpha,pipeline,coverage,lower,upper,stderr\n";
  const std::pair<std::string_view, const NonconformityScore*> pipelines[] = {
      {"base", base.get()}, {"corrected", corrected.get()}};
  const double n = static_cast<double>(config.n_calibration);
  for (const auto& [label, score] : pipelines) {
    const auto estimates = marginal_coverage_sweep(draw, *score, config.n_calibration,
                                                   config.alphas, config.repetitions, trial_seed);
    for (std::size_t a = 0; a < config.alphas.size(); ++a) {
      const double alpha = config.alphas[a];
      const MarginalRow row{alpha, std::string(label), estimates[a].mean, 1.0 - alpha,
                            1.0 - alpha + 1.0 / (n + 1.0), estimates[a].standard_error};
      csv += fmt::format("{},{},{},{},{},{}\n", row.alpha, row.pipeline, row.coverage, row.lower,
                         row.upper, row.standard_error);
      result.rows.push_back(row);
    }
  }
  OutputSet outputs;
  outputs.add("marginal_check.csv", std::move(csv));
  outputs.commit(config);
  return result;
}

void run_experiment(const ExperimentConfig& config) {
  switch (config.experiment) {
    case ExperimentKind::toy: run_toy(config); break;
    case ExperimentKind::convergence: run_convergence(config); break;
    case ExperimentKind::illustration_ks: run_illustration_ks(config); break;
    case ExperimentKind::marginal_check: run_marginal_check(config); break;
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::io, "SHA-256 digest failed");
  }
  std::string out;
  for (unsigned int i = 0; i < length; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

}  // namespace pivotal
