#pragma once

// The ranking model.
//
// Each instance becomes H tokens. Token i concatenates the embedding of the
// item's i-th semantic id with the i-th rotated view of the fused static
// feature block, projected to width d by one shared linear map. L layers of
// X <- LayerNorm(Attention(X) + X) follow, then a mean over tokens, a linear
// head and a sigmoid.
//
// Training alternates two updates per batch: Adam on the network parameters
// and, every rotation_interval batches, a projected gradient step on the
// rotation matrices. Both use gradients of the same loss, BCE plus the
// rotation diversity term.
//
// The raw-id ablation swaps the H SID lookups for a single hashed item-id
// embedding shared by all H positions; everything else is unchanged.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "store/attention.hpp"
#include "store/data.hpp"
#include "store/metrics.hpp"
#include "store/nn.hpp"
#include "store/rotation.hpp"
#include "store/tensor.hpp"
#include "store/tokenizer.hpp"

namespace store::model {

struct StoreConfig {
  std::size_t num_sids = 3;         // H, the token count
  std::size_t codebook_size = 16;   // V
  std::size_t sid_dim = 8;          // d_s
  std::size_t token_dim = 16;       // d
  std::size_t layers = 2;           // L
  attention::AttentionConfig attention;
  bool rotation = true;             // off: every position sees C unrotated
  double diversity_weight = 0.1;    // lambda
  double rotation_lr = 0.05;
  std::size_t rotation_interval = 1;
  bool ffn = false;                 // optional feed-forward sublayer
  bool raw_id = false;
  std::size_t raw_id_buckets = 1u << 17;
  rotation::GroupConfig groups;     // no groups: one per static feature
  OptimizerConfig optimizer{OptimizerKind::kAdam, 2e-3};
  std::size_t batch_size = 256;
  std::size_t eval_batch_size = 2048;
  std::size_t epochs = 1;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const StoreConfig& config);
// Keys present in `j` override `base`; unknown keys are an error.
StoreConfig store_config_from_json(const nlohmann::json& j, StoreConfig base = {});

// One V x d_s table per position.
struct SidEmbeddingBank {
  std::vector<Tensor> tables;

  std::size_t size() const { return tables.size(); }
  // Rows of table `position` for the given codes.
  Tensor lookup(std::size_t position, std::span<const std::size_t> codes) const;
};

struct Layer {
  attention::AttentionWeights attn;
  Tensor ln_gamma, ln_beta;
  bool has_ffn = false;
  Mlp ffn;
  Tensor ffn_gamma, ffn_beta;
};

struct StoreModel {
  StoreConfig config;
  SidEmbeddingBank sid_bank;          // SID path
  Tensor raw_table;                   // raw-id path, [buckets, d_s]
  rotation::GroupFusion fusion;
  rotation::RotationBank rotations;   // empty when rotation is off
  Linear token_proj;                  // (d_s + d_c) -> d
  std::vector<Layer> layers;
  Linear head;                        // d -> 1

  // Everything Adam updates (all but the rotation matrices).
  std::vector<Tensor> network_parameters() const;
};

// Static column names and cardinalities come from `schema`.
StoreModel init_store(const StoreConfig& config, const data::Dataset& schema);

struct Batch {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> sids;     // rows x H, SID path
  std::vector<std::size_t> buckets;  // rows, raw-id path
  std::vector<double> labels;
};

std::size_t raw_id_bucket(std::int64_t item_id, std::size_t buckets);

// Throws when an item has no entry in `sids` or its codes do not fit the model.
Batch make_batch(const StoreModel& model, const data::Dataset& dataset, std::span<const std::size_t> rows,
                 const tokenizer::SidTable* sids);

// token i = proj([s_i ; C R_i]) for per-position embeddings s (H tensors of
// [n, d_s]) and block C [n, d_c]; with no rotation bank, C is used as is.
Tensor build_tokens(std::span<const Tensor> sid_embeddings, const Tensor& block, const rotation::RotationBank* rotations,
                    const Linear& proj);

struct ForwardOutput {
  Tensor probs;   // [n]
  Tensor block;   // C, [n, d_c]
  Tensor tokens;  // X_0, [n, H, d]
};

ForwardOutput forward(const StoreModel& model, const data::Dataset& dataset, const Batch& batch,
                      attention::RoutingTape* tape = nullptr);

struct LossParts {
  Tensor total;      // bce + diversity
  Tensor bce;
  Tensor diversity;  // zero when rotation is off
};

LossParts total_loss(const StoreModel& model, const Tensor& probs, std::span<const double> labels);

// Training cost per batch: forward flops times three (forward + backward).
double model_flops(const StoreModel& model, std::size_t batch_size);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
  double val_gauc = 0.0;
  double val_logloss = 0.0;
  double flops_per_batch = 0.0;
  double max_orth_error = 0.0;   // worst ||R^T R - I||_F after any rotation step
  double max_norm_drift = 0.0;   // worst | ||C R_i|| - ||C|| | on any batch
  std::size_t steps = 0;
};

nlohmann::json to_json(const EpochLog& log);

struct FitResult {
  StoreModel model;
  std::vector<EpochLog> log;
  std::vector<double> step_losses;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// `sids` is required unless config.raw_id is set.
FitResult fit(const data::Dataset& train, const data::Dataset& valid, const StoreConfig& config,
              const tokenizer::SidTable* sids, const EpochCallback& on_epoch = {});

std::vector<double> predict(const StoreModel& model, const data::Dataset& dataset, const tokenizer::SidTable* sids);
metrics::Summary evaluate(const StoreModel& model, const data::Dataset& dataset, const tokenizer::SidTable* sids);

// "STORE1" artifact.
void save_store(const std::filesystem::path& path, const StoreModel& model);
StoreModel load_store(const std::filesystem::path& path);

// ---- logistic regression on one-hot features ------------------------------

struct LogisticConfig {
  std::size_t epochs = 2;
  double lr = 0.05;  // Adagrad
  double l2 = 1e-6;
  std::size_t item_buckets = 1u << 17;
  std::uint64_t seed = 1;
};

struct LogisticModel {
  LogisticConfig config;
  std::vector<std::size_t> offsets;  // start of each static column, item block last
  std::vector<double> weights;
  double bias = 0.0;
};

LogisticModel train_logistic(const data::Dataset& train, const LogisticConfig& config);
std::vector<double> predict_logistic(const LogisticModel& model, const data::Dataset& dataset);

}  // namespace store::model
