#include "pivotal/rq_spline.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "pivotal/error.hpp"

namespace pivotal::spline {

namespace {

double softplus(double v) noexcept {
  return v > 30.0 ? v : std::log1p(std::exp(v));
}

double sigmoid(double v) noexcept { return 1.0 / (1.0 + std::exp(-v)); }

std::vector<double> softmax(std::span<const double> logits) {
  const double top = *std::ranges::max_element(logits);
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += p[i] = std::exp(logits[i] - top);
  for (double& v : p) v /= total;
  return p;
}

std::size_t locate(std::span<const double> knots, double v) {
  // Last k with knots[k] <= v, restricted to a valid bin index.
  const auto it = std::upper_bound(knots.begin() + 1, knots.end() - 1, v);
  return static_cast<std::size_t>(it - knots.begin()) - 1;
}

}  // namespace

Knots build_knots(std::span<const double> head, const SplineShape& shape) {
  const std::size_t K = shape.bins;
  PIVOTAL_REQUIRE(K >= 1, ErrorCode::invalid_argument, "spline needs at least one bin");
  PIVOTAL_REQUIRE(head.size() == head_size(K), ErrorCode::dimension_mismatch,
                  fmt::format("spline head has {} values, expected {}", head.size(), head_size(K)));
  PIVOTAL_REQUIRE(shape.min_bin_width * static_cast<double>(K) < 1.0 &&
                      shape.min_bin_height * static_cast<double>(K) < 1.0 &&
                      shape.min_derivative > 0.0 && shape.min_derivative < 1.0,
                  ErrorCode::invalid_argument, "infeasible spline shape constraints");

  Knots k;
  k.shape = shape;
  k.width_prob = softmax(head.subspan(0, K));
  k.height_prob = softmax(head.subspan(K, K));

  const auto cumulate = [K](const std::vector<double>& prob, double min_size) {
    std::vector<double> edges(K + 1, 0.0);
    const double free_mass = 1.0 - min_size * static_cast<double>(K);
    for (std::size_t i = 0; i < K; ++i) edges[i + 1] = edges[i] + min_size + free_mass * prob[i];
    edges[K] = 1.0;
    return edges;
  };
  k.x = cumulate(k.width_prob, shape.min_bin_width);
  k.y = cumulate(k.height_prob, shape.min_bin_height);

  const double shift = std::log(std::expm1(1.0 - shape.min_derivative));
  k.derivative.assign(K + 1, 1.0);
  k.derivative_gate.assign(K > 0 ? K - 1 : 0, 0.0);
  for (std::size_t i = 1; i < K; ++i) {
    const double pre = head[2 * K + i - 1] + shift;
    k.derivative[i] = shape.min_derivative + softplus(pre);
    k.derivative_gate[i - 1] = sigmoid(pre);
  }
  return k;
}

SplineValue evaluate(const Knots& knots, double z) {
  z = std::clamp(z, 0.0, 1.0);
  const std::size_t k = locate(knots.x, z);
  const double w = knots.width(k);
  const double h = knots.height(k);
  const double slope = h / w;
  const double d0 = knots.derivative[k];
  const double d1 = knots.derivative[k + 1];
  const double xi = std::clamp((z - knots.x[k]) / w, 0.0, 1.0);
  const double xc = xi * (1.0 - xi);

  const double denom = slope + (d1 + d0 - 2.0 * slope) * xc;
  const double value = knots.y[k] + h * (slope * xi * xi + d0 * xc) / denom;
  const double numer = d1 * xi * xi + 2.0 * slope * xc + d0 * (1.0 - xi) * (1.0 - xi);
  const double log_derivative = 2.0 * std::log(slope) + std::log(numer) - 2.0 * std::log(denom);
  return {value, log_derivative};
}

double invert(const Knots& knots, double u) {
  u = std::clamp(u, 0.0, 1.0);
  const std::size_t k = locate(knots.y, u);
  const double w = knots.width(k);
  const double h = knots.height(k);
  const double slope = h / w;
  const double d0 = knots.derivative[k];
  const double d1 = knots.derivative[k + 1];
  const double du = u - knots.y[k];
  const double curvature = d1 + d0 - 2.0 * slope;

  const double a = h * (slope - d0) + du * curvature;
  const double b = h * d0 - du * curvature;
  const double c = -slope * du;
  const double disc = std::max(0.0, b * b - 4.0 * a * c);
  // Numerically stable root of a xi^2 + b xi + c = 0 lying in [0, 1].
  const double denom = -b - std::sqrt(disc);
  const double xi = denom == 0.0 ? 0.0 : std::clamp(2.0 * c / denom, 0.0, 1.0);
  return knots.x[k] + xi * w;
}

double log_derivative_with_gradient(const Knots& knots, double z,
                                    std::span<double> head_gradient) {
  const std::size_t K = knots.bins();
  PIVOTAL_REQUIRE(head_gradient.size() == head_size(K), ErrorCode::dimension_mismatch,
                  "head gradient buffer has the wrong size");
  std::ranges::fill(head_gradient, 0.0);

  z = std::clamp(z, 0.0, 1.0);
  const std::size_t k = locate(knots.x, z);
  const double w = knots.width(k);
  const double h = knots.height(k);
  const double slope = h / w;
  const double d0 = knots.derivative[k];
  const double d1 = knots.derivative[k + 1];
  const double xi = std::clamp((z - knots.x[k]) / w, 0.0, 1.0);
  const double xc = xi * (1.0 - xi);
  const double curvature = d1 + d0 - 2.0 * slope;

  const double numer = d1 * xi * xi + 2.0 * slope * xc + d0 * (1.0 - xi) * (1.0 - xi);
  const double denom = slope + curvature * xc;
  const double value = 2.0 * std::log(slope) + std::log(numer) - 2.0 * std::log(denom);

  // Partials of log g' with respect to the bin-local quantities.
  const double d_slope = 2.0 / slope + 2.0 * xc / numer - 2.0 * (1.0 - 2.0 * xc) / denom;
  const double d_xi =
      (2.0 * d1 * xi + 2.0 * slope * (1.0 - 2.0 * xi) - 2.0 * d0 * (1.0 - xi)) / numer -
      2.0 * curvature * (1.0 - 2.0 * xi) / denom;
  const double d_d0 = (1.0 - xi) * (1.0 - xi) / numer - 2.0 * xc / denom;
  const double d_d1 = xi * xi / numer - 2.0 * xc / denom;

  // Chain to bin widths (w_k directly, and through the left edge x_k = sum_{j<k} w_j).
  std::vector<double> g_width(K, 0.0);
  std::vector<double> g_height(K, 0.0);
  g_width[k] = d_slope * (-h / (w * w)) + d_xi * (-xi / w);
  const double d_left = d_xi * (-1.0 / w);
  for (std::size_t j = 0; j < k; ++j) g_width[j] += d_left;
  g_height[k] = d_slope / w;

  const auto through_softmax = [K](const std::vector<double>& prob, const std::vector<double>& g,
                                   double min_size, std::span<double> out) {
    const double free_mass = 1.0 - min_size * static_cast<double>(K);
    double mean = 0.0;
    for (std::size_t j = 0; j < K; ++j) mean += prob[j] * g[j];
    for (std::size_t i = 0; i < K; ++i) out[i] = free_mass * prob[i] * (g[i] - mean);
  };
  through_softmax(knots.width_prob, g_width, knots.shape.min_bin_width,
                  head_gradient.subspan(0, K));
  through_softmax(knots.height_prob, g_height, knots.shape.min_bin_height,
                  head_gradient.subspan(K, K));

  // Interior derivatives only; boundary derivatives are fixed.
  if (k >= 1) head_gradient[2 * K + k - 1] += d_d0 * knots.derivative_gate[k - 1];
  if (k + 1 <= K - 1) head_gradient[2 * K + k] += d_d1 * knots.derivative_gate[k];
  return value;
}

}  // namespace pivotal::spline
