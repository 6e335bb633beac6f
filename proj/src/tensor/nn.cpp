#include "store/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace store {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation act) { return act == Activation::kTanh ? "tanh" : "identity"; }

Tensor apply(Activation act, const Tensor& x) { return act == Activation::kTanh ? tanh(x) : x; }

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

void Linear::collect(std::vector<Tensor>& params) const {
  params.push_back(weight);
  if (bias.defined()) params.push_back(bias);
}

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Linear layer;
  layer.weight = rand_uniform({in, out}, rng, -limit, limit, true);
  if (with_bias) layer.bias = Tensor::zeros({out}, true);
  return layer;
}

Tensor Mlp::forward(const Tensor& x) const { return output.forward(apply(act, hidden.forward(x))); }

void Mlp::collect(std::vector<Tensor>& params) const {
  hidden.collect(params);
  output.collect(params);
}

Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Activation act, Rng& rng) {
  Mlp m;
  m.hidden = make_linear(in, hidden, rng);
  m.output = make_linear(hidden, out, rng);
  m.act = act;
  return m;
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

void optimizer_step(OptimizerState& state, std::span<Tensor> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("optimizer_step: " + std::to_string(params.size()) + " params vs " +
                                std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw std::invalid_argument("optimizer_step: gradient " + shape_str(grads[i].shape()) +
                                  " does not match parameter " + shape_str(params[i].shape()));
    }
  }
  const OptimizerConfig& cfg = state.config;
  if (cfg.kind == OptimizerKind::kAdam) {
    if (state.first_moment.empty()) {
      for (const Tensor& p : params) {
        state.first_moment.emplace_back(p.numel(), 0.0);
        state.second_moment.emplace_back(p.numel(), 0.0);
      }
    }
    if (state.first_moment.size() != params.size()) {
      throw std::invalid_argument("optimizer_step: parameter count changed between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (state.first_moment[i].size() != params[i].numel()) {
        throw std::invalid_argument("optimizer_step: moment buffer shape mismatch");
      }
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_values();
    const auto g = grads[i].values();
    if (cfg.kind == OptimizerKind::kSgd) {
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= cfg.lr * g[j];
      continue;
    }
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      p[j] -= cfg.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
    }
  }
}

}  // namespace store
