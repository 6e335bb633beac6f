#include <cmath>
#include <stdexcept>

#include "store/model.hpp"
#include "store/serialize.hpp"

namespace store::model {

namespace {

constexpr char kMagic[] = "STORE1";

std::string layer_error(std::size_t l, const std::exception& e) {
  return "forward: non-finite activation in layer " + std::to_string(l + 1) + " (" + e.what() + ")";
}

}  // namespace

Tensor SidEmbeddingBank::lookup(std::size_t position, std::span<const std::size_t> codes) const {
  if (position >= tables.size()) throw std::out_of_range("sid bank: position " + std::to_string(position) + " >= H");
  return gather_rows(tables[position], codes);
}

std::vector<Tensor> StoreModel::network_parameters() const {
  std::vector<Tensor> p;
  p.insert(p.end(), sid_bank.tables.begin(), sid_bank.tables.end());
  if (raw_table.defined()) p.push_back(raw_table);
  fusion.collect(p);
  token_proj.collect(p);
  for (const Layer& l : layers) {
    l.attn.collect(p);
    p.push_back(l.ln_gamma);
    p.push_back(l.ln_beta);
    if (l.has_ffn) {
      l.ffn.collect(p);
      p.push_back(l.ffn_gamma);
      p.push_back(l.ffn_beta);
    }
  }
  head.collect(p);
  return p;
}

StoreModel init_store(const StoreConfig& config, const data::Dataset& schema) {
  config.validate();
  if (schema.num_static() == 0) throw std::invalid_argument("init_store: dataset has no static features");
  StoreModel m;
  m.config = config;
  if (m.config.groups.groups.empty()) {
    m.config.groups = rotation::singleton_groups(schema.static_names, config.groups.embed_dim, config.groups.fused_dim);
  }
  Rng rng(derive_seed(config.seed, 10));
  m.fusion = rotation::make_group_fusion(m.config.groups, schema.static_names, schema.cardinalities, rng);
  const std::size_t d_c = m.fusion.block_dim();
  const std::size_t h = config.num_sids, d = config.token_dim;

  if (config.raw_id) {
    m.raw_table = randn({config.raw_id_buckets, config.sid_dim}, rng, 0.1, true);
  } else {
    for (std::size_t i = 0; i < h; ++i) m.sid_bank.tables.push_back(randn({config.codebook_size, config.sid_dim}, rng, 0.1, true));
  }
  if (config.rotation) m.rotations = rotation::make_rotation_bank(h, d_c, config.diversity_weight, derive_seed(config.seed, 11));
  m.token_proj = make_linear(config.sid_dim + d_c, d, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    Layer layer;
    layer.attn = attention::make_attention_weights(d, rng);
    layer.ln_gamma = Tensor::full({d}, 1.0, true);
    layer.ln_beta = Tensor::zeros({d}, true);
    if (config.ffn) {
      layer.has_ffn = true;
      layer.ffn = make_mlp(d, 2 * d, d, Activation::kTanh, rng);
      layer.ffn_gamma = Tensor::full({d}, 1.0, true);
      layer.ffn_beta = Tensor::zeros({d}, true);
    }
    m.layers.push_back(std::move(layer));
  }
  m.head = make_linear(d, 1, rng);
  return m;
}

std::size_t raw_id_bucket(std::int64_t item_id, std::size_t buckets) {
  if (buckets == 0) throw std::invalid_argument("raw_id_bucket: no buckets");
  return static_cast<std::size_t>(derive_seed(static_cast<std::uint64_t>(item_id), 0x1d) % buckets);
}

Batch make_batch(const StoreModel& model, const data::Dataset& dataset, std::span<const std::size_t> rows,
                 const tokenizer::SidTable* sids) {
  const StoreConfig& c = model.config;
  Batch b;
  b.rows.assign(rows.begin(), rows.end());
  b.labels.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= dataset.size()) throw std::out_of_range("make_batch: row out of range");
    b.labels.push_back(dataset.labels[r]);
  }
  if (c.raw_id) {
    for (std::size_t r : rows) b.buckets.push_back(raw_id_bucket(dataset.item_ids[r], c.raw_id_buckets));
    return b;
  }
  if (!sids) throw std::invalid_argument("make_batch: SID table required unless raw_id is set");
  if (sids->num_codes != c.num_sids) {
    throw std::invalid_argument("make_batch: SID table has K=" + std::to_string(sids->num_codes) + " but the model has H=" +
                                std::to_string(c.num_sids));
  }
  if (sids->codebook_size > c.codebook_size) {
    throw std::invalid_argument("make_batch: SID table V=" + std::to_string(sids->codebook_size) + " exceeds model V=" +
                                std::to_string(c.codebook_size));
  }
  b.sids.reserve(rows.size() * c.num_sids);
  for (std::size_t r : rows) {
    const auto codes = sids->find(dataset.item_ids[r]);
    if (!codes) throw std::invalid_argument("make_batch: item " + std::to_string(dataset.item_ids[r]) + " has no SIDs");
    for (std::uint32_t code : *codes) b.sids.push_back(code);
  }
  return b;
}

Tensor build_tokens(std::span<const Tensor> sid_embeddings, const Tensor& block, const rotation::RotationBank* rotations,
                    const Linear& proj) {
  const std::size_t h = sid_embeddings.size();
  if (h == 0) throw std::invalid_argument("build_tokens: no positions");
  if (rotations && rotations->size() != h) {
    throw std::invalid_argument("build_tokens: " + std::to_string(h) + " SID positions but " +
                                std::to_string(rotations->size()) + " rotations");
  }
  std::vector<Tensor> parts;
  parts.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    const Tensor view = rotations ? rotation::rotate(block, *rotations, i) : block;
    parts.push_back(concat({sid_embeddings[i], view}));
  }
  return proj.forward(stack_tokens(parts));
}

ForwardOutput forward(const StoreModel& model, const data::Dataset& dataset, const Batch& batch,
                      attention::RoutingTape* tape) {
  const StoreConfig& c = model.config;
  const std::size_t n = batch.rows.size();
  if (n == 0) throw std::invalid_argument("forward: empty batch");
  ForwardOutput out;
  try {
    out.block = model.fusion.forward(dataset, batch.rows);
    std::vector<Tensor> s;
    if (c.raw_id) {
      if (batch.buckets.size() != n) throw std::invalid_argument("forward: batch lacks raw-id buckets");
      const Tensor e = gather_rows(model.raw_table, batch.buckets);
      s.assign(c.num_sids, e);
    } else {
      if (batch.sids.size() != n * c.num_sids) throw std::invalid_argument("forward: batch lacks SIDs");
      std::vector<std::size_t> codes(n);
      for (std::size_t i = 0; i < c.num_sids; ++i) {
        for (std::size_t r = 0; r < n; ++r) codes[r] = batch.sids[r * c.num_sids + i];
        s.push_back(model.sid_bank.lookup(i, codes));
      }
    }
    out.tokens = build_tokens(s, out.block, c.rotation ? &model.rotations : nullptr, model.token_proj);
  } catch (const std::domain_error& e) {
    throw std::runtime_error(std::string("forward: non-finite value while building tokens (") + e.what() + ")");
  }

  Tensor x = out.tokens;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Layer& layer = model.layers[l];
    try {
      x = layer_norm(add(attention::attend(x, layer.attn, c.attention, tape), x), layer.ln_gamma, layer.ln_beta);
      if (layer.has_ffn) x = layer_norm(add(layer.ffn.forward(x), x), layer.ffn_gamma, layer.ffn_beta);
    } catch (const std::domain_error& e) {
      throw std::runtime_error(layer_error(l, e));
    }
  }
  try {
    out.probs = sigmoid(reshape(model.head.forward(mean_tokens(x)), {n}));
  } catch (const std::domain_error& e) {
    throw std::runtime_error(std::string("forward: non-finite value in the prediction head (") + e.what() + ")");
  }
  return out;
}

LossParts total_loss(const StoreModel& model, const Tensor& probs, std::span<const double> labels) {
  for (double y : labels)
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("total_loss: label " + std::to_string(y) + " not in {0, 1}");
  LossParts parts;
  parts.bce = binary_cross_entropy(probs, labels);
  if (model.config.rotation && model.rotations.size() > 0) {
    parts.diversity = rotation::diversity_penalty(model.rotations);
    parts.total = add(parts.bce, parts.diversity);
  } else {
    parts.diversity = Tensor::scalar(0.0);
    parts.total = parts.bce;
  }
  return parts;
}

double model_flops(const StoreModel& model, std::size_t batch_size) {
  const StoreConfig& c = model.config;
  const double h = static_cast<double>(c.num_sids), d = static_cast<double>(c.token_dim);
  const double d_c = static_cast<double>(model.fusion.block_dim());
  double per = 0.0;
  for (const Mlp& mlp : model.fusion.mlps) {
    per += 2.0 * static_cast<double>(mlp.hidden.in_features() * mlp.hidden.out_features());
    per += 2.0 * static_cast<double>(mlp.output.in_features() * mlp.output.out_features());
  }
  if (c.rotation) per += h * 2.0 * d_c * d_c;
  per += h * 2.0 * (static_cast<double>(c.sid_dim) + d_c) * d;
  const std::size_t nb = attention::block_count(c.num_sids, c.attention.block_size);
  const std::size_t kb =
      c.attention.efficient ? attention::routed_block_count(c.num_sids, c.attention.block_size, c.attention.sparsity) : nb;
  const double attn = attention::attention_flops(c.num_sids, c.token_dim, c.attention.n_heads, c.attention.block_size, kb).total();
  // residual add plus layer norm, roughly six flops per element
  double layer = attn + 6.0 * h * d;
  if (c.ffn) layer += 2.0 * h * (2.0 * d * 2.0 * d) + 6.0 * h * d;
  per += static_cast<double>(c.layers) * layer;
  per += h * d + 2.0 * d;
  return 3.0 * per * static_cast<double>(batch_size);
}

// ---- persistence -------------------------------------------------------------

void save_store(const std::filesystem::path& path, const StoreModel& m) {
  nlohmann::json body;
  body["config"] = to_json(m.config);
  for (const Tensor& t : m.sid_bank.tables) body["sid_tables"].push_back(to_json(t));
  if (m.raw_table.defined()) body["raw_table"] = to_json(m.raw_table);
  nlohmann::json fusion;
  fusion["columns"] = m.fusion.columns;
  for (const auto& group : m.fusion.tables) {
    nlohmann::json tabs = nlohmann::json::array();
    for (const Tensor& t : group) tabs.push_back(to_json(t));
    fusion["tables"].push_back(tabs);
  }
  for (const Mlp& mlp : m.fusion.mlps) fusion["mlps"].push_back(to_json(mlp));
  body["fusion"] = fusion;
  body["rotations"] = nlohmann::json::array();
  for (const Tensor& r : m.rotations.matrices) body["rotations"].push_back(to_json(r));
  body["token_proj"] = to_json(m.token_proj);
  for (const Layer& l : m.layers) {
    nlohmann::json lj{{"attn",
                       {{"query", to_json(l.attn.query)},
                        {"key", to_json(l.attn.key)},
                        {"value", to_json(l.attn.value)},
                        {"output", to_json(l.attn.output)}}},
                      {"ln_gamma", to_json(l.ln_gamma)},
                      {"ln_beta", to_json(l.ln_beta)}};
    if (l.has_ffn) {
      lj["ffn"] = to_json(l.ffn);
      lj["ffn_gamma"] = to_json(l.ffn_gamma);
      lj["ffn_beta"] = to_json(l.ffn_beta);
    }
    body["layers"].push_back(lj);
  }
  body["head"] = to_json(m.head);
  write_artifact(path, kMagic, body);
}

StoreModel load_store(const std::filesystem::path& path) {
  const nlohmann::json body = read_artifact(path, kMagic);
  try {
    StoreModel m;
    m.config = store_config_from_json(body.at("config"));
    m.config.validate();
    if (body.contains("sid_tables"))
      for (const auto& t : body.at("sid_tables")) m.sid_bank.tables.push_back(tensor_from_json(t));
    if (body.contains("raw_table")) m.raw_table = tensor_from_json(body.at("raw_table"));
    const auto& f = body.at("fusion");
    m.fusion.config = m.config.groups;
    m.fusion.columns = f.at("columns").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& group : f.at("tables")) {
      std::vector<Tensor> tabs;
      for (const auto& t : group) tabs.push_back(tensor_from_json(t));
      m.fusion.tables.push_back(std::move(tabs));
    }
    for (const auto& mlp : f.at("mlps")) m.fusion.mlps.push_back(mlp_from_json(mlp));
    m.rotations.lambda = m.config.diversity_weight;
    for (const auto& r : body.at("rotations")) m.rotations.matrices.push_back(tensor_from_json(r));
    m.token_proj = linear_from_json(body.at("token_proj"));
    for (const auto& lj : body.at("layers")) {
      Layer l;
      const auto& a = lj.at("attn");
      l.attn.query = linear_from_json(a.at("query"));
      l.attn.key = linear_from_json(a.at("key"));
      l.attn.value = linear_from_json(a.at("value"));
      l.attn.output = linear_from_json(a.at("output"));
      l.ln_gamma = tensor_from_json(lj.at("ln_gamma"));
      l.ln_beta = tensor_from_json(lj.at("ln_beta"));
      if (lj.contains("ffn")) {
        l.has_ffn = true;
        l.ffn = mlp_from_json(lj.at("ffn"));
        l.ffn_gamma = tensor_from_json(lj.at("ffn_gamma"));
        l.ffn_beta = tensor_from_json(lj.at("ffn_beta"));
      }
      m.layers.push_back(std::move(l));
    }
    m.head = linear_from_json(body.at("head"));
    if (m.layers.size() != m.config.layers) throw std::runtime_error("layer count does not match config");
    if (!m.config.raw_id && m.sid_bank.size() != m.config.num_sids) throw std::runtime_error("SID table count does not match H");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed STORE model: " + e.what());
  }
}

}  // namespace store::model
