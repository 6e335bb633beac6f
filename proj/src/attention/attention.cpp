#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "store/attention.hpp"

namespace store::attention {

using detail::Node;

void AttentionConfig::validate(std::size_t d_model) const {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("attention: d_model " + std::to_string(d_model) + " not divisible by " +
                                std::to_string(n_heads) + " heads");
  }
  if (block_size == 0) throw std::invalid_argument("attention: block size must be positive");
  if (!(sparsity > 0.0 && sparsity <= 1.0)) throw std::invalid_argument("attention: sparsity must be in (0, 1]");
}

void AttentionWeights::collect(std::vector<Tensor>& params) const {
  query.collect(params);
  key.collect(params);
  value.collect(params);
  output.collect(params);
}

AttentionWeights make_attention_weights(std::size_t d_model, Rng& rng) {
  AttentionWeights w;
  w.query = make_linear(d_model, d_model, rng);
  w.key = make_linear(d_model, d_model, rng);
  w.value = make_linear(d_model, d_model, rng);
  w.output = make_linear(d_model, d_model, rng);
  return w;
}

std::size_t block_count(std::size_t seq_len, std::size_t block_size) {
  if (block_size == 0) throw std::invalid_argument("block_count: block size must be positive");
  return (seq_len + block_size - 1) / block_size;
}

std::size_t routed_block_count(std::size_t seq_len, std::size_t block_size, double sparsity) {
  if (!(sparsity > 0.0 && sparsity <= 1.0)) throw std::invalid_argument("routed_block_count: sparsity must be in (0, 1]");
  const std::size_t n_blocks = block_count(seq_len, block_size);
  // the small slack keeps e.g. 0.5 * 256 / 32 from rounding up to 5
  const double want = std::ceil(sparsity * static_cast<double>(seq_len) / static_cast<double>(block_size) - 1e-9);
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::max(want, 0.0)));
  return std::min(k, n_blocks);
}

RoutingPlan moba_route(std::span<const double> q, std::span<const double> k, std::size_t seq_len, std::size_t d_head,
                       std::size_t block_size, std::size_t k_blocks, bool force_own_block) {
  if (seq_len == 0 || d_head == 0) throw std::invalid_argument("moba_route: empty input");
  if (q.size() != seq_len * d_head || k.size() != seq_len * d_head) throw std::invalid_argument("moba_route: size mismatch");
  RoutingPlan plan;
  plan.seq_len = seq_len;
  plan.block_size = block_size;
  plan.n_blocks = block_count(seq_len, block_size);
  plan.k_blocks = k_blocks;
  if (k_blocks == 0 || k_blocks > plan.n_blocks) {
    throw std::invalid_argument("moba_route: k_blocks " + std::to_string(k_blocks) + " outside [1, " +
                                std::to_string(plan.n_blocks) + "]");
  }
  const std::size_t nb = plan.n_blocks;

  std::vector<double> means(nb * d_head, 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t lo = b * block_size, hi = std::min(seq_len, lo + block_size);
    for (std::size_t t = lo; t < hi; ++t)
      for (std::size_t c = 0; c < d_head; ++c) means[b * d_head + c] += k[t * d_head + c];
    for (std::size_t c = 0; c < d_head; ++c) means[b * d_head + c] /= static_cast<double>(hi - lo);
  }
  plan.gates.resize(seq_len * nb);
  for (std::size_t i = 0; i < seq_len; ++i)
    for (std::size_t b = 0; b < nb; ++b) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d_head; ++c) acc += q[i * d_head + c] * means[b * d_head + c];
      plan.gates[i * nb + b] = acc;
    }

  plan.blocks.resize(seq_len * k_blocks);
  std::vector<std::uint32_t> order(nb);
  for (std::size_t i = 0; i < seq_len; ++i) {
    std::uint32_t* out = plan.blocks.data() + i * k_blocks;
    if (k_blocks == nb) {
      std::iota(out, out + nb, 0u);
      continue;
    }
    const double* g = plan.gates.data() + i * nb;
    const std::uint32_t own = static_cast<std::uint32_t>(i / block_size);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (force_own_block && (a == own) != (b == own)) return a == own;
      return g[a] > g[b];
    });
    std::copy_n(order.begin(), k_blocks, out);
    std::sort(out, out + k_blocks);
  }
  return plan;
}

Tensor routed_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const RoutingPlan> plans) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw std::invalid_argument("routed_attention: q/k/v shapes differ or are not rank 3");
  }
  const std::size_t groups = q.dim(0), seq = q.dim(1), dh = q.dim(2);
  if (plans.size() != groups) throw std::invalid_argument("routed_attention: one routing plan per head required");
  for (const RoutingPlan& p : plans)
    if (p.seq_len != seq) throw std::invalid_argument("routed_attention: plan length does not match sequence");
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto qv = q.values(), kv = k.values(), vv = v.values();

  // Attended key positions and their probabilities, per (group, query).
  std::vector<std::size_t> offsets(groups * seq + 1, 0);
  std::vector<std::uint32_t> keys;
  std::vector<double> probs;
  std::vector<double> out(groups * seq * dh, 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    const RoutingPlan& plan = plans[g];
    const double* Q = qv.data() + g * seq * dh;
    const double* K = kv.data() + g * seq * dh;
    const double* V = vv.data() + g * seq * dh;
    for (std::size_t i = 0; i < seq; ++i) {
      const std::size_t begin = keys.size();
      for (std::uint32_t b : plan.selected(i)) {
        const std::size_t lo = b * plan.block_size, hi = std::min(seq, lo + plan.block_size);
        for (std::size_t t = lo; t < hi; ++t) keys.push_back(static_cast<std::uint32_t>(t));
      }
      double mx = -INFINITY;
      for (std::size_t a = begin; a < keys.size(); ++a) {
        double s = 0.0;
        const double* kr = K + keys[a] * dh;
        for (std::size_t c = 0; c < dh; ++c) s += Q[i * dh + c] * kr[c];
        s *= scale;
        probs.push_back(s);
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t a = begin; a < keys.size(); ++a) z += (probs[a] = std::exp(probs[a] - mx));
      double* o = out.data() + (g * seq + i) * dh;
      for (std::size_t a = begin; a < keys.size(); ++a) {
        probs[a] /= z;
        const double* vr = V + keys[a] * dh;
        for (std::size_t c = 0; c < dh; ++c) o[c] += probs[a] * vr[c];
      }
      offsets[g * seq + i + 1] = keys.size();
    }
  }

  return make_result(
      "routed_attention", q.shape(), std::move(out), {q, k, v},
      [groups, seq, dh, scale, offsets = std::move(offsets), keys = std::move(keys),
       probs = std::move(probs)](Node& self) {
        Node& nq = *self.parents[0];
        Node& nk = *self.parents[1];
        Node& nv = *self.parents[2];
        std::vector<double> dp;
        for (std::size_t g = 0; g < groups; ++g) {
          const std::size_t base = g * seq * dh;
          for (std::size_t i = 0; i < seq; ++i) {
            const double* dO = self.grad.data() + base + i * dh;
            const std::size_t lo = offsets[g * seq + i], hi = offsets[g * seq + i + 1];
            dp.assign(hi - lo, 0.0);
            double dot = 0.0;
            for (std::size_t a = lo; a < hi; ++a) {
              const double* vr = nv.value.data() + base + keys[a] * dh;
              double acc = 0.0;
              for (std::size_t c = 0; c < dh; ++c) acc += dO[c] * vr[c];
              dp[a - lo] = acc;
              dot += probs[a] * acc;
            }
            const double* qi = nq.value.data() + base + i * dh;
            for (std::size_t a = lo; a < hi; ++a) {
              const std::size_t kbase = base + keys[a] * dh;
              if (nv.requires_grad)
                for (std::size_t c = 0; c < dh; ++c) nv.grad[kbase + c] += probs[a] * dO[c];
              const double ds = probs[a] * (dp[a - lo] - dot) * scale;
              if (ds == 0.0) continue;
              if (nq.requires_grad)
                for (std::size_t c = 0; c < dh; ++c) nq.grad[base + i * dh + c] += ds * nk.value[kbase + c];
              if (nk.requires_grad)
                for (std::size_t c = 0; c < dh; ++c) nk.grad[kbase + c] += ds * qi[c];
            }
          }
        }
      });
}

namespace {

struct Projected {
  Tensor q, k, v;  // [n * heads, H, dh]
};

Projected project(const Tensor& x, const AttentionWeights& w, std::size_t n_heads) {
  if (x.rank() != 3 || x.dim(2) != w.d_model()) {
    throw std::invalid_argument("attention: expected [n, H, " + std::to_string(w.d_model()) + "] input, got " +
                                shape_str(x.shape()));
  }
  if (n_heads == 0 || w.d_model() % n_heads != 0) throw std::invalid_argument("attention: d_model not divisible by heads");
  return {split_heads(w.query.forward(x), n_heads), split_heads(w.key.forward(x), n_heads),
          split_heads(w.value.forward(x), n_heads)};
}

}  // namespace

Tensor dense_attention(const Tensor& x, const AttentionWeights& w, std::size_t n_heads) {
  const Projected p = project(x, w, n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.q.dim(2)));
  const Tensor probs = softmax(store::scale(bmm(p.q, p.k, true), scale));
  return w.output.forward(merge_heads(bmm(probs, p.v), n_heads));
}

Tensor efficient_attention(const Tensor& x, const AttentionWeights& w, const AttentionConfig& config,
                           RoutingTape* tape) {
  config.validate(w.d_model());
  const Projected p = project(x, w, config.n_heads);
  const std::size_t groups = p.q.dim(0), seq = p.q.dim(1), dh = p.q.dim(2);
  const std::size_t kb = routed_block_count(seq, config.block_size, config.sparsity);

  std::vector<RoutingPlan> plans;
  if (tape && tape->mode == RoutingTape::Mode::kReplay) {
    if (tape->cursor + groups > tape->plans.size()) throw std::logic_error("routing tape exhausted during replay");
    plans.assign(tape->plans.begin() + static_cast<std::ptrdiff_t>(tape->cursor),
                 tape->plans.begin() + static_cast<std::ptrdiff_t>(tape->cursor + groups));
    tape->cursor += groups;
  } else {
    plans.reserve(groups);
    const auto qv = p.q.values(), kv = p.k.values();
    for (std::size_t g = 0; g < groups; ++g) {
      plans.push_back(moba_route(qv.subspan(g * seq * dh, seq * dh), kv.subspan(g * seq * dh, seq * dh), seq, dh,
                                 config.block_size, kb, config.force_own_block));
    }
    if (tape) {
      tape->plans.insert(tape->plans.end(), plans.begin(), plans.end());
      tape->cursor += groups;
    }
  }
  return w.output.forward(merge_heads(routed_attention(p.q, p.k, p.v, plans), config.n_heads));
}

Tensor attend(const Tensor& x, const AttentionWeights& w, const AttentionConfig& config, RoutingTape* tape) {
  return config.efficient ? efficient_attention(x, w, config, tape) : dense_attention(x, w, config.n_heads);
}

FlopBreakdown attention_flops(std::size_t seq_len, std::size_t d_model, std::size_t n_heads, std::size_t block_size,
                              std::size_t k_blocks, bool include_projections) {
  if (seq_len == 0 || d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("attention_flops: invalid dimensions");
  }
  const std::size_t nb = block_count(seq_len, block_size);
  if (k_blocks == 0 || k_blocks > nb) throw std::invalid_argument("attention_flops: k_blocks outside [1, blocks]");
  const double h = static_cast<double>(seq_len), d = static_cast<double>(d_model);
  const double attended = std::min(h, static_cast<double>(k_blocks * block_size));
  FlopBreakdown f;
  if (include_projections) f.projection = 4.0 * 2.0 * h * d * d;
  // summed over heads, every query costs 2 * attended * d_head per term
  f.score = 2.0 * h * attended * d;
  f.value = 2.0 * h * attended * d;
  if (k_blocks < nb) f.routing = h * d + 2.0 * h * static_cast<double>(nb) * d;
  return f;
}

}  // namespace store::attention

namespace store::attention {

BenchRow bench_attention(std::size_t seq_len, std::size_t block_size, double sparsity, std::size_t d_model,
                         std::size_t n_heads, std::size_t batch, std::size_t reps, std::uint64_t seed) {
  if (batch == 0 || reps == 0) throw std::invalid_argument("bench_attention: batch and reps must be positive");
  Rng rng(seed);
  const AttentionWeights w = make_attention_weights(d_model, rng);
  const Tensor x = randn({batch, seq_len, d_model}, rng, 1.0);
  AttentionConfig cfg;
  cfg.n_heads = n_heads;
  cfg.block_size = block_size;
  cfg.sparsity = sparsity;
  cfg.validate(d_model);

  BenchRow row;
  row.seq_len = seq_len;
  row.block_size = block_size;
  row.k_blocks = routed_block_count(seq_len, block_size, sparsity);
  const std::size_t nb = block_count(seq_len, block_size);
  row.dense_flops = attention_flops(seq_len, d_model, n_heads, block_size, nb).total() * static_cast<double>(batch);
  row.sparse_flops = attention_flops(seq_len, d_model, n_heads, block_size, row.k_blocks).total() * static_cast<double>(batch);

  auto time_ms = [reps](auto&& fn) {
    double best = INFINITY;
    for (std::size_t r = 0; r < reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      const auto t1 = std::chrono::steady_clock::now();
      best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
  };
  Tensor dense, sparse;
  row.wall_time_dense_ms = time_ms([&] { dense = dense_attention(x, w, n_heads); });
  row.wall_time_sparse_ms = time_ms([&] { sparse = efficient_attention(x, w, cfg); });

  AttentionConfig full = cfg;
  full.sparsity = 1.0;
  const Tensor at_one = efficient_attention(x, w, full);
  for (std::size_t i = 0; i < dense.numel(); ++i)
    row.max_abs_diff_at_rho1 = std::max(row.max_abs_diff_at_rho1, std::abs(dense[i] - at_one[i]));
  return row;
}

}  // namespace store::attention
