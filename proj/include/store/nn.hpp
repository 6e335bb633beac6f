#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "store/tensor.hpp"

namespace store {

using Rng = std::mt19937_64;

// Mixes a base seed with a stream tag so independent consumers never share
// a random sequence.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);
Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

enum class Activation { kIdentity, kTanh };

Activation parse_activation(const std::string& name);
std::string to_string(Activation act);
Tensor apply(Activation act, const Tensor& x);

// y = x W + b with W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when the layer has no bias

  Tensor forward(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void collect(std::vector<Tensor>& params) const;
};

// Glorot-uniform weights, zero bias.
Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

// One hidden layer: out(act(hidden(x))).
struct Mlp {
  Linear hidden;
  Linear output;
  Activation act = Activation::kTanh;

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Tensor>& params) const;
};

Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t out, Activation act, Rng& rng);

// ---- optimizers ------------------------------------------------------------

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter moment buffers; created on the first step and shape-checked
// on every later one.
struct OptimizerState {
  OptimizerConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  explicit OptimizerState(OptimizerConfig cfg = {}) : config(cfg) {}
};

// SGD:  p -= lr * g
// Adam: bias-corrected first/second moments, p -= lr * m_hat / (sqrt(v_hat) + eps)
void optimizer_step(OptimizerState& state, std::span<Tensor> params, std::span<const Tensor> grads);

}  // namespace store
