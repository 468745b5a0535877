#include "pivotal/scores.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "pivotal/error.hpp"
#include "pivotal/random.hpp"

namespace pivotal {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::train: return "train";
    case Role::calibration: return "calibration";
    case Role::test: return "test";
  }
  return "unknown";
}

Dataset::Dataset(std::vector<LabeledSample> samples, Role role)
    : samples_(std::move(samples)), role_(role) {
  if (samples_.empty()) return;
  feature_dim_ = samples_.front().features.size();
  outcome_dim_ = samples_.front().outcome.size();
  PIVOTAL_REQUIRE(feature_dim_ >= 1 && outcome_dim_ >= 1, ErrorCode::dimension_mismatch,
                  "dataset samples need p >= 1 and d >= 1");
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (s.features.size() != feature_dim_ || s.outcome.size() != outcome_dim_) {
      throw Error(ErrorCode::dimension_mismatch,
                  fmt::format("sample {} has shape ({}, {}), expected ({}, {})", i,
                              s.features.size(), s.outcome.size(), feature_dim_, outcome_dim_),
                  i);
    }
    const auto finite = [](double v) { return std::isfinite(v); };
    if (!std::ranges::all_of(s.features, finite) || !std::ranges::all_of(s.outcome, finite)) {
      throw Error(ErrorCode::non_finite, fmt::format("sample {} has a non-finite entry", i), i);
    }
  }
}

Dataset Dataset::with_role(Role role) const {
  Dataset copy = *this;
  copy.role_ = role;
  return copy;
}

std::uint64_t Dataset::fingerprint() const noexcept {
  std::uint64_t h = mix64(samples_.size());
  const auto absorb = [&h](double v) { h = mix64(h ^ std::bit_cast<std::uint64_t>(v)); };
  for (const auto& s : samples_) {
    for (double v : s.features) absorb(v);
    for (double v : s.outcome) absorb(v);
  }
  return h;
}

std::vector<Interval> NonconformityScore::sublevel_set(std::span<const double>, double) const {
  throw Error(ErrorCode::unsupported, "score does not admit interval extraction");
}

std::vector<Interval> NonconformityScore::full_set(std::span<const double>) const {
  throw Error(ErrorCode::unsupported, "score does not admit interval extraction");
}

std::string_view to_string(ScoreKind kind) noexcept {
  switch (kind) {
    case ScoreKind::absolute_residual: return "absolute_residual";
    case ScoreKind::raw_response: return "raw_response";
    case ScoreKind::negative_density: return "negative_density";
    case ScoreKind::scaled_linf_residual: return "scaled_linf_residual";
  }
  return "unknown";
}

ScoreKind score_kind_from_string(std::string_view name) {
  for (auto kind : {ScoreKind::absolute_residual, ScoreKind::raw_response,
                    ScoreKind::negative_density, ScoreKind::scaled_linf_residual}) {
    if (to_string(kind) == name) return kind;
  }
  throw Error(ErrorCode::invalid_argument, fmt::format("unknown score kind '{}'", name));
}

ScoreFunction::ScoreFunction(ScoreKind kind, Predictor predictor, std::vector<double> scale,
                             OutcomeDensity density)
    : kind_(kind),
      predictor_(std::move(predictor)),
      scale_(std::move(scale)),
      density_(std::move(density)) {}

ScoreFunction ScoreFunction::absolute_residual(Predictor predictor) {
  return ScoreFunction(ScoreKind::absolute_residual, std::move(predictor), {}, {});
}

ScoreFunction ScoreFunction::raw_response() {
  return ScoreFunction(ScoreKind::raw_response, {}, {}, {});
}

ScoreFunction ScoreFunction::negative_density(OutcomeDensity density) {
  PIVOTAL_REQUIRE(static_cast<bool>(density), ErrorCode::invalid_argument,
                  "negative_density requires a density evaluator");
  return ScoreFunction(ScoreKind::negative_density, {}, {}, std::move(density));
}

ScoreFunction ScoreFunction::scaled_linf_residual(Predictor predictor, std::vector<double> scale) {
  PIVOTAL_REQUIRE(static_cast<bool>(predictor), ErrorCode::invalid_argument,
                  "scaled_linf_residual requires a predictor");
  PIVOTAL_REQUIRE(!scale.empty(), ErrorCode::invalid_argument,
                  "scaled_linf_residual requires a scale vector");
  for (double s : scale) {
    PIVOTAL_REQUIRE(std::isfinite(s) && s > 0.0, ErrorCode::invalid_argument,
                    "scaled_linf_residual scale entries must be finite and > 0");
  }
  return ScoreFunction(ScoreKind::scaled_linf_residual, std::move(predictor), std::move(scale), {});
}

double ScoreFunction::center(std::span<const double> x) const {
  if (!predictor_) return 0.0;
  const auto prediction = predictor_(x);
  PIVOTAL_REQUIRE(prediction.size() == 1, ErrorCode::dimension_mismatch,
                  "predictor output must have length 1 for a scalar score");
  return prediction.front();
}

double ScoreFunction::evaluate(std::span<const double> x, std::span<const double> y) const {
  double value = 0.0;
  switch (kind_) {
    case ScoreKind::absolute_residual:
      PIVOTAL_REQUIRE(y.size() == 1, ErrorCode::dimension_mismatch,
                      "absolute_residual requires d = 1");
      value = std::abs(y[0] - center(x));
      break;
    case ScoreKind::raw_response:
      PIVOTAL_REQUIRE(y.size() == 1, ErrorCode::dimension_mismatch, "raw_response requires d = 1");
      value = y[0];
      break;
    case ScoreKind::negative_density:
      value = -density_(x, y);
      break;
    case ScoreKind::scaled_linf_residual: {
      PIVOTAL_REQUIRE(y.size() == scale_.size(), ErrorCode::dimension_mismatch,
                      "outcome length differs from the scale vector");
      const auto prediction = predictor_(x);
      PIVOTAL_REQUIRE(prediction.size() == y.size(), ErrorCode::dimension_mismatch,
                      "predictor output length differs from the outcome");
      for (std::size_t j = 0; j < y.size(); ++j) {
        value = std::max(value, std::abs(y[j] - prediction[j]) / scale_[j]);
      }
      break;
    }
  }
  PIVOTAL_REQUIRE(std::isfinite(value), ErrorCode::non_finite,
                  fmt::format("{} score is not finite", to_string(kind_)));
  return value;
}

std::vector<Interval> ScoreFunction::sublevel_set(std::span<const double> x,
                                                  double threshold) const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (kind_) {
    case ScoreKind::absolute_residual: {
      if (threshold < 0.0) return {};
      const double c = center(x);
      return {{c - threshold, c + threshold}};
    }
    case ScoreKind::raw_response:
      return {{-inf, threshold}};
    default:
      throw Error(ErrorCode::unsupported,
                  fmt::format("{} does not admit interval extraction", to_string(kind_)));
  }
}

std::vector<Interval> ScoreFunction::full_set(std::span<const double>) const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (kind_ == ScoreKind::absolute_residual || kind_ == ScoreKind::raw_response) {
    return {{-inf, inf}};
  }
  throw Error(ErrorCode::unsupported,
              fmt::format("{} does not admit interval extraction", to_string(kind_)));
}

nlohmann::json ScoreFunction::describe() const {
  nlohmann::json j{{"kind", to_string(kind_)}, {"has_predictor", static_cast<bool>(predictor_)}};
  if (!scale_.empty()) j["scale"] = scale_;
  return j;
}

double evaluate_score(const NonconformityScore& score, std::span<const double> x,
                      std::span<const double> y) {
  return score.evaluate(x, y);
}

std::vector<double> evaluate_scores(const NonconformityScore& score, const Dataset& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(score.evaluate(s.features, s.outcome));
  return out;
}

DatasetSplit split_dataset(const Dataset& data, std::array<double, 3> fractions,
                           std::uint64_t seed) {
  PIVOTAL_REQUIRE(!data.empty(), ErrorCode::empty_input, "split_dataset: empty dataset");
  for (double f : fractions) {
    PIVOTAL_REQUIRE(f > 0.0, ErrorCode::invalid_argument, "split fractions must be positive");
  }
  PIVOTAL_REQUIRE(std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) <= 1e-9,
                  ErrorCode::invalid_argument, "split fractions must sum to 1");

  const std::size_t n = data.size();
  // Guard against products like 10 * 0.3 = 3.0000000000000004 landing just below an integer.
  const auto share = [n](double f) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9));
  };
  const std::size_t n_cal = share(fractions[1]);
  const std::size_t n_test = share(fractions[2]);
  const std::size_t n_train = n - n_cal - n_test;
  if (n_train == 0 || n_cal == 0 || n_test == 0) {
    throw Error(ErrorCode::empty_input,
                fmt::format("split of {} samples leaves an empty part ({}, {}, {})", n, n_train,
                            n_cal, n_test));
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  CounterRng rng(seed, 0x5117);
  shuffle(order, rng);

  const auto take = [&](std::size_t from, std::size_t count, Role role) {
    std::vector<LabeledSample> part;
    part.reserve(count);
    for (std::size_t i = from; i < from + count; ++i) part.push_back(data[order[i]]);
    return Dataset(std::move(part), role);
  };
  return {take(0, n_train, Role::train), take(n_train, n_cal, Role::calibration),
          take(n_train + n_cal, n_test, Role::test)};
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t'))
    s.remove_suffix(1);
  return s;
}

}  // namespace

Dataset read_csv(std::istream& in, Role role) {
  std::string line;
  PIVOTAL_REQUIRE(static_cast<bool>(std::getline(in, line)), ErrorCode::io,
                  "csv: missing header row");
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);

  std::size_t p = 0;
  std::size_t d = 0;
  const auto header = split_fields(line);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto name = trim(header[c]);
    const bool is_x = name == fmt::format("x_{}", p);
    const bool is_y = name == fmt::format("y_{}", d);
    if (is_x && d == 0) {
      ++p;
    } else if (is_y) {
      ++d;
    } else {
      throw Error(ErrorCode::io, fmt::format("csv: unexpected header column '{}'", name), c);
    }
  }
  PIVOTAL_REQUIRE(p >= 1 && d >= 1, ErrorCode::io, "csv: header needs x_0 and y_0 columns");

  std::vector<LabeledSample> samples;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != p + d) {
      throw Error(ErrorCode::io, fmt::format("csv: row {} has {} fields, expected {}", row,
                                             fields.size(), p + d),
                  row);
    }
    LabeledSample sample;
    sample.features.resize(p);
    sample.outcome.resize(d);
    for (std::size_t c = 0; c < p + d; ++c) {
      const auto text = trim(fields[c]);
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
      if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw Error(ErrorCode::io, fmt::format("csv: row {} column {} is not a number", row, c),
                    row);
      }
      (c < p ? sample.features[c] : sample.outcome[c - p]) = value;
    }
    samples.push_back(std::move(sample));
  }
  return Dataset(std::move(samples), role);
}

Dataset read_csv(const std::filesystem::path& path, Role role) {
  std::ifstream in(path);
  PIVOTAL_REQUIRE(in.good(), ErrorCode::io, fmt::format("cannot open {}", path.string()));
  return read_csv(in, role);
}

void write_csv(std::ostream& out, const Dataset& data) {
  std::string text;
  for (std::size_t j = 0; j < data.feature_dim(); ++j) text += fmt::format("x_{},", j);
  for (std::size_t j = 0; j < data.outcome_dim(); ++j) {
    text += fmt::format("y_{}", j);
    if (j + 1 < data.outcome_dim()) text += ',';
  }
  text += '\n';
  for (const auto& s : data) {
    for (double v : s.features) text += fmt::format("{},", v);
    for (std::size_t j = 0; j < s.outcome.size(); ++j) {
      text += fmt::format("{}", s.outcome[j]);
      if (j + 1 < s.outcome.size()) text += ',';
    }
    text += '\n';
  }
  out << text;
}

void write_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  PIVOTAL_REQUIRE(out.good(), ErrorCode::io, fmt::format("cannot write {}", path.string()));
  write_csv(out, data);
}

}  // namespace pivotal
