#pragma once

// Semantic tokenization of high-cardinality item ids.
//
// OPMQ encodes a pretrained item embedding with K parallel experts, snaps each
// latent to the nearest codeword of that expert's own codebook, and decodes
// the sum of the quantized latents back to the embedding. Quantization uses a
// straight-through construction, z + sg(s - z), so the reconstruction loss
// trains the experts and decoder but never the codewords; codewords learn from
// the usual VQ codebook/commitment terms. An orthogonality penalty on the
// L2-normalized, flattened expert weights keeps the experts non-redundant.
//
// The residual quantizer is the ablation baseline: K k-means codebooks fit in
// sequence, each to the residual left by the previous ones.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "store/data.hpp"
#include "store/nn.hpp"
#include "store/tensor.hpp"

namespace store::tokenizer {

// item id -> K codes, each in [0, V).
struct SidTable {
  std::size_t num_codes = 0;      // K
  std::size_t codebook_size = 0;  // V
  std::vector<std::int64_t> item_ids;
  std::vector<std::uint32_t> codes;  // row-major, size() x K

  std::size_t size() const { return item_ids.size(); }
  std::span<const std::uint32_t> row(std::size_t r) const { return {codes.data() + r * num_codes, num_codes}; }
  std::optional<std::span<const std::uint32_t>> find(std::int64_t item_id) const;
  void validate() const;

 private:
  mutable std::vector<std::pair<std::int64_t, std::size_t>> sorted_;
};

bool operator==(const SidTable& a, const SidTable& b);

// Header "item_id,K=<K>,V=<V>", then item_id,sid_1,...,sid_K.
void write_sid_table(const std::filesystem::path& path, const SidTable& table);
SidTable read_sid_table(const std::filesystem::path& path);

// ---- OPMQ ------------------------------------------------------------------

// Which expert parameters form the vector that the orthogonality penalty sees.
enum class OrthTarget { kHiddenLayer, kAllLayers };

struct OpmqConfig {
  std::size_t num_experts = 3;     // K
  std::size_t codebook_size = 16;  // V
  std::size_t latent_dim = 0;      // d_z, 0 means d_p
  std::size_t hidden_dim = 0;      // expert and decoder hidden width, 0 means d_p
  Activation activation = Activation::kTanh;
  OrthTarget orth_target = OrthTarget::kHiddenLayer;
  double orth_weight = 0.1;
  double vq_weight = 1.0;
  double commitment = 0.25;  // beta
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double lr = 5e-3;
  std::size_t reinit_interval = 500;  // steps between dead-code checks
  std::size_t kmeans_iters = 10;      // codebook initialization
  std::uint64_t seed = 7;
};

struct OpmqModel {
  std::size_t input_dim = 0;  // d_p
  OpmqConfig config;
  std::vector<Mlp> experts;
  std::vector<Tensor> codebooks;  // K tensors of [V, d_z]
  Mlp decoder;                    // d_z -> d_p

  std::size_t num_experts() const { return experts.size(); }
  std::size_t codebook_size() const { return codebooks.front().dim(0); }
  std::size_t latent_dim() const { return codebooks.front().dim(1); }
  std::vector<Tensor> parameters() const;
  // The matrix W_i per expert that enters the orthogonality penalty.
  std::vector<Tensor> orth_weights() const;
};

// Random weights; codebooks drawn from the initial latents of `init_points`
// by k-means when given, otherwise Gaussian.
OpmqModel init_opmq(std::size_t input_dim, const OpmqConfig& config,
                    const data::EmbeddingTable* init_points = nullptr);

// e_p as [d_p] or [n, d_p] -> K latents of [n, d_z].
std::vector<Tensor> encode_experts(const Tensor& e_p, const OpmqModel& model);

struct Codeword {
  std::size_t index = 0;
  std::vector<double> vector;
};

// argmin_j ||z - s_j||^2, lowest index on ties.
Codeword nearest_codeword(std::span<const double> z, const Tensor& codebook);
std::size_t nearest_index(std::span<const double> z, std::span<const double> codebook, std::size_t dim);

struct OpmqOutput {
  std::vector<std::uint32_t> sids;  // n x K
  std::vector<Tensor> latents;      // z_i
  Tensor reconstruction;            // [n, d_p]
  Tensor loss_recon;                // mean over items of ||e_p - decoder(sum_i quantized_i)||^2
  Tensor vq_loss;                   // sum_i mean(||sg(z_i) - s||^2 + beta ||z_i - sg(s)||^2)
};

// Forward pass with fresh nearest-codeword assignments.
OpmqOutput opmq_forward(const Tensor& e_p, const OpmqModel& model);
// Same, with the codeword assignment given (n x K); used to differentiate with
// the assignment held fixed.
OpmqOutput opmq_forward(const Tensor& e_p, const OpmqModel& model, std::span<const std::uint32_t> fixed_sids);

// ||V V^T - I||_F^2 over the L2-normalized flattened expert weights.
Tensor orth_penalty(const OpmqModel& model);

struct OpmqEpochLog {
  std::size_t epoch = 0;
  double loss_recon = 0.0;
  double vq_loss = 0.0;
  double orth_penalty = 0.0;
  double total = 0.0;
  std::size_t reseeded_codes = 0;
};

struct OpmqTrainResult {
  OpmqModel model;
  std::vector<OpmqEpochLog> log;
  SidTable assignments;  // final pass of the trained model
  double initial_orth_penalty = 0.0;
  double final_loss_recon = 0.0;
  std::vector<std::string> warnings;
};

OpmqTrainResult train_opmq(const data::EmbeddingTable& embeddings, const OpmqConfig& config);

SidTable tokenize_catalog(const data::EmbeddingTable& embeddings, const OpmqModel& model);

// "OPMQ1" artifact.
void save_opmq(const std::filesystem::path& path, const OpmqModel& model);
OpmqModel load_opmq(const std::filesystem::path& path);

// ---- residual quantization baseline ---------------------------------------

struct KMeansResult {
  std::vector<double> centroids;  // k x d
  std::vector<std::size_t> assignment;
  double inertia = 0.0;
};

// k-means++ seeding, Lloyd iterations, final assignment against the final
// centroids. Empty clusters keep their previous centroid.
KMeansResult kmeans(std::span<const double> points, std::size_t n, std::size_t dim, std::size_t k,
                    std::size_t iters, std::uint64_t seed);

struct RqConfig {
  std::size_t num_codes = 3;       // K stages
  std::size_t codebook_size = 16;  // V
  std::size_t iters = 25;
  std::uint64_t seed = 7;
};

struct RqResult {
  SidTable sids;
  std::vector<std::vector<double>> codebooks;  // per stage, V x d_p
  // Mean squared residual norm before stage 1 and after each stage (K + 1).
  std::vector<double> residual_norms;
};

RqResult train_rq_baseline(const data::EmbeddingTable& embeddings, const RqConfig& config);

}  // namespace store::tokenizer
