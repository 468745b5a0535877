#include "pivotal/nn.hpp"

#include <cmath>

#include <fmt/format.h>

#include "pivotal/error.hpp"
#include "pivotal/random.hpp"

namespace pivotal::nn {

namespace {
constexpr int kFormatVersion = 1;
}

Mlp::Mlp(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
  PIVOTAL_REQUIRE(sizes_.size() >= 2, ErrorCode::invalid_argument,
                  "an Mlp needs at least input and output sizes");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    PIVOTAL_REQUIRE(sizes_[l] > 0 && sizes_[l + 1] > 0, ErrorCode::invalid_argument,
                    "layer sizes must be positive");
    offsets_.push_back(total);
    total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_.assign(total, 0.0);
}

Mlp Mlp::glorot(std::vector<std::size_t> layer_sizes, std::uint64_t seed) {
  Mlp net(std::move(layer_sizes));
  CounterRng rng(seed, 0x6107);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const double fan_in = static_cast<double>(net.sizes_[l]);
    const double fan_out = static_cast<double>(net.sizes_[l + 1]);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    auto w = net.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
    }
  }
  return net;
}

Eigen::Map<const RowMatrix> Mlp::weight(std::size_t layer) const {
  return {params_.data() + offsets_.at(layer), static_cast<Eigen::Index>(sizes_[layer + 1]),
          static_cast<Eigen::Index>(sizes_[layer])};
}

Eigen::Map<RowMatrix> Mlp::weight(std::size_t layer) {
  return {params_.data() + offsets_.at(layer), static_cast<Eigen::Index>(sizes_[layer + 1]),
          static_cast<Eigen::Index>(sizes_[layer])};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t layer) const {
  return {params_.data() + bias_offset(layer), static_cast<Eigen::Index>(sizes_[layer + 1])};
}

Eigen::Map<Eigen::VectorXd> Mlp::bias(std::size_t layer) {
  return {params_.data() + bias_offset(layer), static_cast<Eigen::Index>(sizes_[layer + 1])};
}

RowMatrix forward_batch(const Mlp& net, const RowMatrix& inputs, ForwardCache* cache) {
  PIVOTAL_REQUIRE(static_cast<std::size_t>(inputs.cols()) == net.input_size(),
                  ErrorCode::dimension_mismatch,
                  fmt::format("input width {} differs from network input size {}", inputs.cols(),
                              net.input_size()));
  if (cache) cache->inputs.clear();
  RowMatrix a = inputs;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    RowMatrix z = a * net.weight(l).transpose();
    z.rowwise() += net.bias(l).transpose();
    if (l + 1 < net.layer_count()) z = z.array().tanh();
    if (cache) cache->inputs.push_back(std::move(a));
    a = std::move(z);
  }
  return a;
}

std::vector<double> forward(const Mlp& net, std::span<const double> x) {
  PIVOTAL_REQUIRE(x.size() == net.input_size(), ErrorCode::dimension_mismatch,
                  fmt::format("input length {} differs from network input size {}", x.size(),
                              net.input_size()));
  RowMatrix in(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) in(0, static_cast<Eigen::Index>(j)) = x[j];
  const RowMatrix out = forward_batch(net, in);
  return {out.data(), out.data() + out.size()};
}

void backward_batch(const Mlp& net, const ForwardCache& cache, const RowMatrix& output_gradient,
                    std::span<double> parameter_gradient, RowMatrix* input_gradient) {
  PIVOTAL_REQUIRE(cache.inputs.size() == net.layer_count(), ErrorCode::invalid_argument,
                  "backward needs the cache of a matching forward pass");
  PIVOTAL_REQUIRE(parameter_gradient.size() == net.parameter_count(),
                  ErrorCode::dimension_mismatch, "parameter gradient buffer has the wrong size");
  PIVOTAL_REQUIRE(static_cast<std::size_t>(output_gradient.cols()) == net.output_size(),
                  ErrorCode::dimension_mismatch, "output gradient width mismatch");

  RowMatrix delta = output_gradient;
  for (std::size_t l = net.layer_count(); l-- > 0;) {
    const RowMatrix& a = cache.inputs[l];
    const auto out = static_cast<Eigen::Index>(net.layer_sizes()[l + 1]);
    const auto in = static_cast<Eigen::Index>(net.layer_sizes()[l]);
    Eigen::Map<RowMatrix> gw(parameter_gradient.data() + net.weight_offset(l), out, in);
    Eigen::Map<Eigen::VectorXd> gb(parameter_gradient.data() + net.bias_offset(l), out);
    gw.noalias() += delta.transpose() * a;
    gb.noalias() += delta.colwise().sum().transpose();

    if (l == 0 && input_gradient == nullptr) break;
    RowMatrix upstream = delta * net.weight(l);
    if (l > 0) {
      // a holds tanh activations of the previous layer.
      upstream.array() *= 1.0 - a.array().square();
    }
    delta = std::move(upstream);
  }
  if (input_gradient) *input_gradient = std::move(delta);
}

Gradients backward(const Mlp& net, std::span<const double> x,
                   std::span<const double> output_gradient) {
  PIVOTAL_REQUIRE(output_gradient.size() == net.output_size(), ErrorCode::dimension_mismatch,
                  "output gradient length mismatch");
  RowMatrix in(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) in(0, static_cast<Eigen::Index>(j)) = x[j];
  ForwardCache cache;
  forward_batch(net, in, &cache);
  RowMatrix g(1, static_cast<Eigen::Index>(output_gradient.size()));
  for (std::size_t j = 0; j < output_gradient.size(); ++j) {
    g(0, static_cast<Eigen::Index>(j)) = output_gradient[j];
  }
  Gradients result;
  result.parameters.assign(net.parameter_count(), 0.0);
  RowMatrix input_grad;
  backward_batch(net, cache, g, result.parameters, &input_grad);
  result.input.assign(input_grad.data(), input_grad.data() + input_grad.size());
  return result;
}

AdamState::AdamState(std::size_t parameter_count, AdamOptions options)
    : options_(options), m_(parameter_count, 0.0), v_(parameter_count, 0.0) {
  PIVOTAL_REQUIRE(options.learning_rate > 0.0 && options.beta1 >= 0.0 && options.beta1 < 1.0 &&
                      options.beta2 >= 0.0 && options.beta2 < 1.0 && options.epsilon > 0.0,
                  ErrorCode::invalid_argument, "invalid Adam hyperparameters");
}

void AdamState::set_learning_rate(double rate) {
  PIVOTAL_REQUIRE(rate > 0.0 && std::isfinite(rate), ErrorCode::invalid_argument,
                  "learning rate must be positive");
  options_.learning_rate = rate;
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  PIVOTAL_REQUIRE(params.size() == state.m_.size() && grads.size() == state.m_.size(),
                  ErrorCode::dimension_mismatch, "adam_step: shape mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw Error(ErrorCode::non_finite, fmt::format("gradient of parameter {} is not finite", i),
                  i);
    }
  }
  const auto& o = state.options_;
  ++state.steps_;
  const double t = static_cast<double>(state.steps_);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    state.m_[i] = o.beta1 * state.m_[i] + (1.0 - o.beta1) * grads[i];
    state.v_[i] = o.beta2 * state.v_[i] + (1.0 - o.beta2) * grads[i] * grads[i];
    const double m_hat = state.m_[i] / correction1;
    const double v_hat = state.v_[i] / correction2;
    params[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
  }
}

double clip_global_norm(std::span<double> grads, double max_norm) {
  double sum = 0.0;
  for (double g : grads) sum += g * g;
  const double norm = std::sqrt(sum);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (double& g : grads) g *= factor;
  }
  return norm;
}

nlohmann::json to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto w = net.weight(l);
    const auto b = net.bias(l);
    layers.push_back({{"weight", std::vector<double>(w.data(), w.data() + w.size())},
                      {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  return {{"format_version", kFormatVersion},
          {"activation", "tanh"},
          {"layer_sizes", net.layer_sizes()},
          {"layers", std::move(layers)}};
}

Mlp mlp_from_json(const nlohmann::json& doc) {
  try {
    const int version = doc.at("format_version").get<int>();
    PIVOTAL_REQUIRE(version == kFormatVersion, ErrorCode::io,
                    fmt::format("unsupported network format_version {}", version));
    Mlp net(doc.at("layer_sizes").get<std::vector<std::size_t>>());
    const auto& layers = doc.at("layers");
    PIVOTAL_REQUIRE(layers.size() == net.layer_count(), ErrorCode::io, "layer count mismatch");
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      const auto w = layers[l].at("weight").get<std::vector<double>>();
      const auto b = layers[l].at("bias").get<std::vector<double>>();
      auto wm = net.weight(l);
      auto bv = net.bias(l);
      PIVOTAL_REQUIRE(w.size() == static_cast<std::size_t>(wm.size()) &&
                          b.size() == static_cast<std::size_t>(bv.size()),
                      ErrorCode::io, fmt::format("layer {} parameter shape mismatch", l));
      std::copy(w.begin(), w.end(), wm.data());
      std::copy(b.begin(), b.end(), bv.data());
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, fmt::format("malformed network document: {}", e.what()));
  }
}

}  // namespace pivotal::nn
