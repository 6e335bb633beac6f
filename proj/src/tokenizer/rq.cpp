#include <limits>
#include <stdexcept>

#include "store/tokenizer.hpp"

namespace store::tokenizer {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
  return acc;
}

}  // namespace

KMeansResult kmeans(std::span<const double> points, std::size_t n, std::size_t dim, std::size_t k,
                    std::size_t iters, std::uint64_t seed) {
  if (n == 0 || dim == 0 || k == 0) throw std::invalid_argument("kmeans: n, dim and k must be positive");
  if (points.size() != n * dim) throw std::invalid_argument("kmeans: point buffer size mismatch");
  Rng rng(seed);
  KMeansResult res;
  res.centroids.resize(k * dim);

  // k-means++ seeding; with fewer points than clusters, points repeat.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(rng() % n);
  std::copy_n(points.data() + first * dim, dim, res.centroids.data());
  for (std::size_t c = 1; c < k; ++c) {
    const double* prev = res.centroids.data() + (c - 1) * dim;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(points.data() + i * dim, prev, dim));
      total += d2[i];
    }
    std::size_t pick = static_cast<std::size_t>(rng() % n);
    if (total > 0.0) {
      const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
    std::copy_n(points.data() + pick * dim, dim, res.centroids.data() + c * dim);
  }

  res.assignment.assign(n, 0);
  auto assign = [&] {
    res.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      res.assignment[i] = nearest_index(points.subspan(i * dim, dim), res.centroids, dim);
      res.inertia += sq_dist(points.data() + i * dim, res.centroids.data() + res.assignment[i] * dim, dim);
    }
  };
  assign();
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < iters; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[res.assignment[i]];
      for (std::size_t j = 0; j < dim; ++j) sums[res.assignment[i] * dim + j] += points[i * dim + j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) res.centroids[c * dim + j] = sums[c * dim + j] / static_cast<double>(counts[c]);
    }
    const std::vector<std::size_t> before = res.assignment;
    assign();
    if (before == res.assignment) break;
  }
  return res;
}

RqResult train_rq_baseline(const data::EmbeddingTable& embeddings, const RqConfig& config) {
  if (embeddings.size() == 0) throw std::invalid_argument("train_rq_baseline: empty embedding table");
  if (config.num_codes == 0 || config.codebook_size == 0) throw std::invalid_argument("train_rq_baseline: K and V must be positive");
  const std::size_t n = embeddings.size();
  const std::size_t d = embeddings.dim();
  std::vector<double> residual = embeddings.values();
  auto mean_sq = [&] {
    double acc = 0.0;
    for (double x : residual) acc += x * x;
    return acc / static_cast<double>(n);
  };

  RqResult out;
  out.sids.num_codes = config.num_codes;
  out.sids.codebook_size = config.codebook_size;
  out.sids.item_ids = embeddings.ids();
  out.sids.codes.assign(n * config.num_codes, 0);
  out.residual_norms.push_back(mean_sq());
  for (std::size_t stage = 0; stage < config.num_codes; ++stage) {
    KMeansResult km = kmeans(residual, n, d, config.codebook_size, config.iters, derive_seed(config.seed, stage));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = km.assignment[i];
      out.sids.codes[i * config.num_codes + stage] = static_cast<std::uint32_t>(c);
      for (std::size_t j = 0; j < d; ++j) residual[i * d + j] -= km.centroids[c * d + j];
    }
    out.codebooks.push_back(std::move(km.centroids));
    out.residual_norms.push_back(mean_sq());
  }
  return out;
}

}  // namespace store::tokenizer
