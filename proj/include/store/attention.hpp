#pragma once

// Multi-head self-attention over the H tokens of an instance, dense and
// block-sparse.
//
// The sparse path partitions keys into blocks of B consecutive tokens (the last
// block may be short; missing positions are treated as padding and never
// attended to). Each query scores every block by dot(q, mean key of the block),
// keeps its k_blocks best blocks, always including its own block unless that
// rule is switched off, and attends only to keys in the kept blocks. Routing
// is decided per (batch element, head, layer) and is constant during the
// backward pass.
//
// Scores are scaled by 1/sqrt(d_head). There is no causal mask.

#include <cstdint>
#include <span>
#include <vector>

#include "store/nn.hpp"
#include "store/tensor.hpp"

namespace store::attention {

struct AttentionConfig {
  std::size_t n_heads = 1;
  std::size_t block_size = 1;  // B
  double sparsity = 0.5;       // rho, fraction of blocks each query keeps
  bool force_own_block = true;
  bool efficient = true;       // false selects the dense path

  void validate(std::size_t d_model) const;
};

// Q/K/V/output projections, each d_model x d_model with bias.
struct AttentionWeights {
  Linear query, key, value, output;

  std::size_t d_model() const { return query.in_features(); }
  void collect(std::vector<Tensor>& params) const;
};

AttentionWeights make_attention_weights(std::size_t d_model, Rng& rng);

std::size_t block_count(std::size_t seq_len, std::size_t block_size);
// max(1, ceil(rho * H / B)) limited to the number of blocks.
std::size_t routed_block_count(std::size_t seq_len, std::size_t block_size, double sparsity);

// Routing for one (batch element, head).
struct RoutingPlan {
  std::size_t seq_len = 0;
  std::size_t block_size = 0;
  std::size_t n_blocks = 0;
  std::size_t k_blocks = 0;
  std::vector<std::uint32_t> blocks;  // seq_len x k_blocks, ascending per query
  std::vector<double> gates;          // seq_len x n_blocks

  std::span<const std::uint32_t> selected(std::size_t query) const { return {blocks.data() + query * k_blocks, k_blocks}; }
};

// q and k are [seq_len, d_head] row-major. Ties go to the lower block index.
RoutingPlan moba_route(std::span<const double> q, std::span<const double> k, std::size_t seq_len, std::size_t d_head,
                       std::size_t block_size, std::size_t k_blocks, bool force_own_block = true);

// Records routing plans in call order, or replays them, so a loss can be
// re-evaluated with routing held fixed.
struct RoutingTape {
  enum class Mode { kRecord, kReplay };
  Mode mode = Mode::kRecord;
  std::vector<RoutingPlan> plans;
  std::size_t cursor = 0;

  void rewind(Mode m) {
    mode = m;
    cursor = 0;
    if (m == Mode::kRecord) plans.clear();
  }
};

// Softmax attention of q[g, H, dh] over keys/values [g, H, dh] restricted to
// the routed blocks of plans[g]. Differentiable in q, k and v.
Tensor routed_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const RoutingPlan> plans);

// x[n, H, d] -> [n, H, d].
Tensor dense_attention(const Tensor& x, const AttentionWeights& w, std::size_t n_heads);
Tensor efficient_attention(const Tensor& x, const AttentionWeights& w, const AttentionConfig& config,
                           RoutingTape* tape = nullptr);
// Dispatches on config.efficient.
Tensor attend(const Tensor& x, const AttentionWeights& w, const AttentionConfig& config, RoutingTape* tape = nullptr);

// Analytic forward cost for one instance, two flops per multiply-add.
struct FlopBreakdown {
  double projection = 0.0;  // Q, K, V and output projections
  double score = 0.0;       // q . k over attended keys
  double value = 0.0;       // probability-weighted values
  double routing = 0.0;     // block means and gate scores; zero when nothing is pruned

  double attention_terms() const { return score + value; }
  double total() const { return projection + score + value + routing; }
};

// Dense attention is the k_blocks == block_count case.
FlopBreakdown attention_flops(std::size_t seq_len, std::size_t d_model, std::size_t n_heads, std::size_t block_size,
                              std::size_t k_blocks, bool include_projections = true);

// One benchmark row: `batch` random instances of H tokens through a random
// attention layer, dense and routed at the given sparsity, forward pass only.
struct BenchRow {
  std::size_t seq_len = 0;
  std::size_t block_size = 0;
  std::size_t k_blocks = 0;
  double dense_flops = 0.0;
  double sparse_flops = 0.0;
  double wall_time_dense_ms = 0.0;   // best of `reps`
  double wall_time_sparse_ms = 0.0;
  double max_abs_diff_at_rho1 = 0.0; // routed at full selection vs dense
};

BenchRow bench_attention(std::size_t seq_len, std::size_t block_size, double sparsity, std::size_t d_model,
                         std::size_t n_heads, std::size_t batch, std::size_t reps, std::uint64_t seed);

}  // namespace store::attention
