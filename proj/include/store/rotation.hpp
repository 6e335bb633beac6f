#pragma once

// Static-feature fusion and orthogonal rotation.
//
// Low-cardinality static features are split into named groups. Each feature
// has its own embedding table; a group's embeddings are concatenated and fused
// by a shallow MLP into d_g numbers, and the group outputs are concatenated
// into the feature block C (d_c = groups * d_g). K orthogonal matrices R_i give
// K rotated views O_i = C R_i of the same block.
//
// The R_i are trained outside the network optimizer: a plain gradient step is
// followed by projection onto the orthogonal group (polar factor of the SVD),
// so the constraint holds exactly after every update.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "store/data.hpp"
#include "store/nn.hpp"
#include "store/tensor.hpp"

namespace store::rotation {

struct FeatureGroup {
  std::string name;
  std::vector<std::string> features;
};

struct GroupConfig {
  std::vector<FeatureGroup> groups;
  std::size_t embed_dim = 8;  // per-feature embedding width
  std::size_t fused_dim = 4;  // d_g

  std::size_t block_dim() const { return groups.size() * fused_dim; }
  // Every name in `static_names` must appear in exactly one group and groups
  // may only name known features.
  void validate(std::span<const std::string> static_names) const;
};

// One group per feature; used when a config names no groups.
GroupConfig singleton_groups(std::span<const std::string> static_names, std::size_t embed_dim = 8,
                             std::size_t fused_dim = 4);

// C = [mlp_1(g_1), ..., mlp_K(g_K)] for per-group inputs g_k of [n, in_k].
Tensor fuse_groups(std::span<const Tensor> group_inputs, std::span<const Mlp> mlps);

// Embedding tables and fusion MLPs for a dataset's static columns.
struct GroupFusion {
  GroupConfig config;
  std::vector<std::vector<std::size_t>> columns;  // per group, static column index per feature
  std::vector<std::vector<Tensor>> tables;        // per group, per feature [cardinality, embed_dim]
  std::vector<Mlp> mlps;                          // hidden width 2 * d_g, tanh

  std::size_t block_dim() const { return config.block_dim(); }
  // Embedded, concatenated features of each group for the given rows.
  std::vector<Tensor> group_inputs(const data::Dataset& dataset, std::span<const std::size_t> rows) const;
  Tensor forward(const data::Dataset& dataset, std::span<const std::size_t> rows) const;
  void collect(std::vector<Tensor>& params) const;
};

GroupFusion make_group_fusion(const GroupConfig& config, std::span<const std::string> static_names,
                              std::span<const std::size_t> cardinalities, Rng& rng);

struct RotationBank {
  std::vector<Tensor> matrices;  // K leaves of [d_c, d_c]
  double lambda = 0.1;

  std::size_t size() const { return matrices.size(); }
  std::size_t dim() const { return matrices.empty() ? 0 : matrices.front().dim(0); }
};

// K random orthogonal matrices.
RotationBank make_rotation_bank(std::size_t k, std::size_t dim, double lambda, std::uint64_t seed);

// O_i = C R_i (row vectors); `i` is zero-based.
Tensor rotate(const Tensor& c, const RotationBank& bank, std::size_t i);

// -lambda * sum_{i<j} ||R_i - R_j||_F^2, differentiable in every R_i.
Tensor diversity_penalty(const RotationBank& bank);

// Nearest orthogonal matrix in Frobenius norm (U V^T from the SVD of m).
// Throws when a singular value falls below 1e-8.
Tensor project_orthogonal(const Tensor& m);

// Haar-distributed orthogonal matrix.
Tensor random_orthogonal(std::size_t dim, std::uint64_t seed);

// R_i <- project(R_i - lr * g_i), written in place so the parameter handles
// stay valid.
void rotation_step(RotationBank& bank, std::span<const Tensor> grads, double lr);

// ||R^T R - I||_F
double orthogonality_error(const Tensor& r);
double determinant(const Tensor& r);
// Largest | ||row of C R_i|| - ||row of C|| | over rows and rotations.
double norm_drift(const Tensor& c, const RotationBank& bank);

}  // namespace store::rotation
