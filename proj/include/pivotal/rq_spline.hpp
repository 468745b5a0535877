#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pivotal::spline {

/// Shape constraints of a monotone rational-quadratic spline on [0, 1] x [0, 1].
struct SplineShape {
  std::size_t bins = 8;
  double min_bin_width = 1e-3;
  double min_bin_height = 1e-3;
  double min_derivative = 1e-4;
};

/// Unconstrained head values consumed per spline: K width logits, K height
/// logits and K - 1 interior derivative pre-activations.
constexpr std::size_t head_size(std::size_t bins) noexcept { return 3 * bins - 1; }

/// Knots of a strictly increasing spline mapping [0, 1] onto [0, 1].
///
/// Widths and heights come from a softmax mixed with the minimum bin size;
/// interior derivatives are min_derivative + softplus(c + shift) where the
/// shift makes a zero head produce unit derivatives, so an all-zero head is
/// the identity map. Boundary derivatives are fixed at 1, which lets the
/// spline continue as the identity outside [0, 1].
struct Knots {
  std::vector<double> x;           // K + 1 knot positions, x[0] = 0, x[K] = 1
  std::vector<double> y;           // K + 1 knot values,    y[0] = 0, y[K] = 1
  std::vector<double> derivative;  // K + 1 knot derivatives
  std::vector<double> width_prob;  // softmax of width logits
  std::vector<double> height_prob; // softmax of height logits
  std::vector<double> derivative_gate;  // d derivative / d pre-activation, interior knots
  SplineShape shape;

  std::size_t bins() const noexcept { return shape.bins; }
  double width(std::size_t k) const noexcept { return x[k + 1] - x[k]; }
  double height(std::size_t k) const noexcept { return y[k + 1] - y[k]; }
};

Knots build_knots(std::span<const double> head, const SplineShape& shape);

struct SplineValue {
  double value;
  double log_derivative;
};

/// Evaluates the spline at z in [0, 1] (clamped to the bin range).
SplineValue evaluate(const Knots& knots, double z);

/// Analytic inverse of the bin-local rational quadratic; u in [0, 1].
double invert(const Knots& knots, double u);

/// log g'(z) and its gradient with respect to the head values that built the
/// knots (written to `head_gradient`, length head_size(bins)).
double log_derivative_with_gradient(const Knots& knots, double z,
                                    std::span<double> head_gradient);

}  // namespace pivotal::spline
