#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace store::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- schema ----------------------------------------------------------------

enum class ColumnRole { kItem, kStatic, kGroupKey, kLabel, kIgnore };

ColumnRole parse_role(const std::string& name);
std::string to_string(ColumnRole role);

struct ColumnSpec {
  std::string name;
  ColumnRole role = ColumnRole::kStatic;
  std::size_t cardinality_hint = 0;
};

struct DatasetSchema {
  std::vector<ColumnSpec> columns;

  // Exactly one label, at least one item and one group-key column.
  void validate() const;
  std::vector<std::string> static_columns() const;
  const ColumnSpec& column(ColumnRole role) const;

  // label/item/group named explicitly, every other header column static.
  static DatasetSchema from_header(std::span<const std::string> header, const std::string& label,
                                   const std::string& item, const std::string& group_key,
                                   std::span<const std::string> ignored = {});
  // The public Avazu click log: click label, site_id as item, device_ip as
  // the grouping key, `id` and `hour` dropped.
  static DatasetSchema avazu();
};

// Per-column categorical vocabulary; index 0 is reserved for out-of-vocabulary.
class Vocabulary {
 public:
  std::int32_t lookup(const std::string& value) const;
  std::int32_t insert(const std::string& value);
  std::size_t size_with_oov() const { return index_.size() + 1; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::unordered_map<std::string, std::int32_t> index_;
  std::vector<std::string> tokens_;
};

// ---- dataset ---------------------------------------------------------------

struct Dataset {
  std::vector<std::string> static_names;
  std::vector<std::size_t> cardinalities;  // per static column, OOV slot included
  std::vector<std::int64_t> item_ids;
  std::vector<std::int64_t> group_keys;
  std::vector<std::uint8_t> labels;
  std::vector<std::int32_t> static_values;  // row-major, size() x num_static()
  bool chronological = true;

  std::size_t size() const { return labels.size(); }
  std::size_t num_static() const { return static_names.size(); }
  std::int32_t static_value(std::size_t row, std::size_t col) const {
    return static_values[row * num_static() + col];
  }
  std::optional<std::size_t> static_index(const std::string& name) const;

  Dataset subset(std::span<const std::size_t> rows) const;
  void validate() const;
};

// Non-numeric keys (hex ids in the Avazu logs) are mapped through a 63-bit
// FNV-1a hash so every file agrees on the same integer id.
std::int64_t parse_key(const std::string& text);

struct ReadOptions {
  // Vocabularies are grown from this leading fraction of rows (the training
  // partition); later unseen values map to OOV.
  double vocab_fraction = 0.9;
  // Reuse vocabularies from a previously read file instead of building new ones.
  const std::vector<Vocabulary>* vocabularies = nullptr;
  // Opt-in: skip malformed rows instead of failing, counting them.
  bool skip_malformed = false;
};

struct ReadResult {
  Dataset dataset;
  std::vector<Vocabulary> vocabularies;
  std::size_t skipped_rows = 0;
};

// Comma-separated, header first, file order preserved. Malformed rows raise
// DataError naming the 1-based line; a schema column absent from the header
// is a schema error.
ReadResult read_avazu_csv(const std::filesystem::path& path, const DatasetSchema& schema,
                          const ReadOptions& options = {});

// Writes "click,item_id,user_id,<static...>" with integer-coded values.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& dataset);

std::pair<Dataset, Dataset> chronological_split(const Dataset& dataset, double valid_fraction);
std::pair<Dataset, Dataset> random_split(const Dataset& dataset, double valid_fraction, std::uint64_t seed);

// Optional binary cache: magic "STRD1", JSON schema echo, raw arrays.
void write_dataset_cache(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset_cache(const std::filesystem::path& path);

// ---- pretrained item embeddings --------------------------------------------

class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 0) : dim_(dim) {}

  void add(std::int64_t id, std::span<const double> vector);
  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  std::int64_t id(std::size_t row) const { return ids_[row]; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * dim_, dim_}; }
  std::optional<std::size_t> find(std::int64_t id) const;
  const std::vector<std::int64_t>& ids() const { return ids_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t dim_;
  std::vector<std::int64_t> ids_;
  std::vector<double> values_;
  std::unordered_map<std::int64_t, std::size_t> index_;
};

// Header "item_id,dim=<d>", then item_id,v0,...,v{d-1} per row.
EmbeddingTable read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);

// Convenience embeddings for logs that ship without pretrained vectors: each
// item's co-occurrence profile over static feature values (log counts) is
// sketched through fixed Gaussian directions and L2-normalized. A stand-in for
// sequence-model embeddings, not a replacement for them.
EmbeddingTable cooccurrence_embeddings(const Dataset& dataset, std::size_t dim, std::uint64_t seed);

// ---- synthetic CTR data ----------------------------------------------------

struct SyntheticSpec {
  std::size_t n_instances = 20000;
  std::size_t n_items = 2000;
  std::size_t n_users = 500;
  std::size_t d_p = 16;
  std::size_t n_clusters = 16;
  // Cardinality of each static feature, grouped; group 0 holds user attributes
  // that are fixed per user.
  std::vector<std::vector<std::size_t>> static_groups = {{4, 3, 6}, {8, 5}, {6, 4}};
  double cluster_spread = 1.0;   // stddev of cluster centers
  double item_noise = 0.15;      // stddev of items around their center
  double bias = -1.0;
  double main_effect_scale = 0.3;
  double pair_scale = 0.8;        // planted static x static interactions
  std::size_t n_pairs = 6;
  double cluster_scale = 0.8;     // planted item-cluster x static interactions
  double item_effect_scale = 0.2; // idiosyncratic per-item offset
  double logit_scale = 1.0;
  double label_noise = 0.0;       // flip probability, in [0, 0.5)
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticData {
  Dataset dataset;
  data::EmbeddingTable embeddings;
  // Effective click probability per instance (label noise included).
  std::vector<double> click_probability;
  // Planted score per instance before the sigmoid.
  std::vector<double> planted_score;
  std::vector<std::vector<std::string>> feature_groups;
};

// Pure function of the spec.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

// ---- batching --------------------------------------------------------------

// Row indices per batch covering every instance once; the final partial batch
// is kept. With shuffle on, order is a deterministic function of (seed, epoch).
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 std::size_t epoch, bool shuffle = true);

}  // namespace store::data
