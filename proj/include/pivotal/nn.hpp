#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace pivotal::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Fully connected network: tanh on hidden layers, identity on the output.
///
/// Parameters live in one flat buffer, layer by layer: the (out x in) weight
/// matrix in row-major order followed by the bias vector. Gradients and the
/// optimizer state share that layout.
class Mlp {
 public:
  Mlp() = default;
  /// Zero-initialized network with the given layer sizes (input ... output).
  explicit Mlp(std::vector<std::size_t> layer_sizes);

  /// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases.
  static Mlp glorot(std::vector<std::size_t> layer_sizes, std::uint64_t seed);

  const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
  std::size_t input_size() const noexcept { return sizes_.front(); }
  std::size_t output_size() const noexcept { return sizes_.back(); }
  std::size_t layer_count() const noexcept { return sizes_.size() - 1; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  Eigen::Map<const RowMatrix> weight(std::size_t layer) const;
  Eigen::Map<RowMatrix> weight(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + sizes_[layer] * sizes_[layer + 1];
  }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

/// Layer inputs recorded by a batched forward pass, needed by backward.
struct ForwardCache {
  std::vector<RowMatrix> inputs;
};

std::vector<double> forward(const Mlp& net, std::span<const double> x);
/// Rows of `inputs` are samples.
RowMatrix forward_batch(const Mlp& net, const RowMatrix& inputs, ForwardCache* cache = nullptr);

struct Gradients {
  std::vector<double> parameters;
  std::vector<double> input;
};

/// Reverse-mode gradients of the scalar loss whose gradient with respect to
/// the network output is `output_gradient`.
Gradients backward(const Mlp& net, std::span<const double> x,
                   std::span<const double> output_gradient);

/// Batched variant: accumulates into `parameter_gradient` (flat layout, summed
/// over rows) and optionally writes per-row input gradients.
void backward_batch(const Mlp& net, const ForwardCache& cache, const RowMatrix& output_gradient,
                    std::span<double> parameter_gradient, RowMatrix* input_gradient = nullptr);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t parameter_count, AdamOptions options = {});

  const AdamOptions& options() const noexcept { return options_; }
  /// Moments are kept; only the step size changes.
  void set_learning_rate(double rate);
  std::size_t step_count() const noexcept { return steps_; }
  std::span<const double> first_moment() const noexcept { return m_; }
  std::span<const double> second_moment() const noexcept { return v_; }

 private:
  friend void adam_step(AdamState&, std::span<double>, std::span<const double>);
  AdamOptions options_;
  std::size_t steps_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

/// Bias-corrected adaptive-moment update. A non-finite gradient entry throws
/// ErrorCode::non_finite carrying the parameter index; parameters are then untouched.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

/// Rescales `grads` in place to global L2 norm at most `max_norm`; returns the
/// norm before clipping.
double clip_global_norm(std::span<double> grads, double max_norm);

nlohmann::json to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& doc);

}  // namespace pivotal::nn
