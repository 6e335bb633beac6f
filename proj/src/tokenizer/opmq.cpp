#include <cmath>
#include <stdexcept>

#include "store/serialize.hpp"
#include "store/tokenizer.hpp"

namespace store::tokenizer {

namespace {

constexpr char kMagic[] = "OPMQ1";

Tensor embedding_batch(const data::EmbeddingTable& table, std::span<const std::size_t> rows) {
  std::vector<double> v;
  v.reserve(rows.size() * table.dim());
  for (std::size_t r : rows) v.insert(v.end(), table.row(r).begin(), table.row(r).end());
  return Tensor::from_values({rows.size(), table.dim()}, std::move(v));
}

Tensor all_embeddings(const data::EmbeddingTable& table) {
  return Tensor::from_values({table.size(), table.dim()}, table.values());
}

Tensor as_batch(const Tensor& e_p) { return e_p.rank() == 1 ? reshape(e_p, {1, e_p.dim(0)}) : e_p; }

}  // namespace

std::vector<Tensor> OpmqModel::parameters() const {
  std::vector<Tensor> params;
  for (const Mlp& e : experts) e.collect(params);
  params.insert(params.end(), codebooks.begin(), codebooks.end());
  decoder.collect(params);
  return params;
}

std::vector<Tensor> OpmqModel::orth_weights() const {
  std::vector<Tensor> out;
  for (const Mlp& e : experts) {
    const Tensor& w = e.hidden.weight;
    Tensor flat = reshape(w, {1, w.numel()});
    if (config.orth_target == OrthTarget::kAllLayers) {
      const Tensor& w2 = e.output.weight;
      flat = concat({flat, reshape(w2, {1, w2.numel()})});
    }
    out.push_back(flat);
  }
  return out;
}

OpmqModel init_opmq(std::size_t input_dim, const OpmqConfig& config, const data::EmbeddingTable* init_points) {
  if (input_dim == 0 || config.num_experts == 0 || config.codebook_size == 0) {
    throw std::invalid_argument("init_opmq: dimensions, K and V must be positive");
  }
  OpmqModel m;
  m.input_dim = input_dim;
  m.config = config;
  const std::size_t d_z = config.latent_dim ? config.latent_dim : input_dim;
  const std::size_t hidden = config.hidden_dim ? config.hidden_dim : input_dim;
  Rng rng(derive_seed(config.seed, 1));
  for (std::size_t i = 0; i < config.num_experts; ++i)
    m.experts.push_back(make_mlp(input_dim, hidden, d_z, config.activation, rng));
  m.decoder = make_mlp(d_z, hidden, input_dim, config.activation, rng);

  if (init_points && init_points->size() > 0) {
    if (init_points->dim() != input_dim) throw std::invalid_argument("init_opmq: embedding dim mismatch");
    const std::vector<Tensor> latents = encode_experts(all_embeddings(*init_points), m);
    for (std::size_t i = 0; i < config.num_experts; ++i) {
      KMeansResult km = kmeans(latents[i].values(), init_points->size(), d_z, config.codebook_size,
                               config.kmeans_iters, derive_seed(config.seed, 100 + i));
      m.codebooks.push_back(Tensor::from_values({config.codebook_size, d_z}, std::move(km.centroids), true));
    }
  } else {
    for (std::size_t i = 0; i < config.num_experts; ++i)
      m.codebooks.push_back(randn({config.codebook_size, d_z}, rng, 0.1, true));
  }
  return m;
}

std::vector<Tensor> encode_experts(const Tensor& e_p, const OpmqModel& model) {
  const Tensor x = as_batch(e_p);
  if (x.rank() != 2 || x.dim(1) != model.input_dim) {
    throw std::invalid_argument("encode_experts: expected embeddings of dim " + std::to_string(model.input_dim) +
                                ", got " + shape_str(e_p.shape()));
  }
  std::vector<Tensor> z;
  z.reserve(model.experts.size());
  for (const Mlp& expert : model.experts) z.push_back(expert.forward(x));
  return z;
}

std::size_t nearest_index(std::span<const double> z, std::span<const double> codebook, std::size_t dim) {
  if (dim == 0 || codebook.empty()) throw std::invalid_argument("nearest_codeword: empty codebook");
  if (z.size() != dim || codebook.size() % dim != 0) throw std::invalid_argument("nearest_codeword: dim mismatch");
  const std::size_t v = codebook.size() / dim;
  std::size_t best = 0;
  double best_d = 0.0;
  for (std::size_t j = 0; j < v; ++j) {
    const double* s = codebook.data() + j * dim;
    double d = 0.0;
    for (std::size_t k = 0; k < dim; ++k) d += (z[k] - s[k]) * (z[k] - s[k]);
    if (j == 0 || d < best_d) {
      best = j;
      best_d = d;
    }
  }
  return best;
}

Codeword nearest_codeword(std::span<const double> z, const Tensor& codebook) {
  if (codebook.rank() != 2 || codebook.dim(0) == 0) throw std::invalid_argument("nearest_codeword: empty codebook");
  const std::size_t dim = codebook.dim(1);
  Codeword c;
  c.index = nearest_index(z, codebook.values(), dim);
  const auto row = codebook.values().subspan(c.index * dim, dim);
  c.vector.assign(row.begin(), row.end());
  return c;
}

namespace {

OpmqOutput forward_impl(const Tensor& e_p, const OpmqModel& model, std::span<const std::uint32_t> fixed) {
  const Tensor x = as_batch(e_p);
  const std::size_t n = x.dim(0);
  const std::size_t k = model.num_experts();
  const std::size_t d_z = model.latent_dim();
  OpmqOutput out;
  out.latents = encode_experts(x, model);
  out.sids.assign(n * k, 0);
  if (!fixed.empty() && fixed.size() != n * k) throw std::invalid_argument("opmq_forward: assignment size mismatch");

  const double beta = model.config.commitment;
  Tensor summed;
  Tensor vq;
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < k; ++i) {
    const Tensor& z = out.latents[i];
    const Tensor& book = model.codebooks[i];
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t c = fixed.empty() ? nearest_index(z.values().subspan(r * d_z, d_z), book.values(), d_z)
                                          : fixed[r * k + i];
      if (c >= model.codebook_size()) throw std::out_of_range("opmq_forward: code out of range");
      rows[r] = c;
      out.sids[r * k + i] = static_cast<std::uint32_t>(c);
    }
    const Tensor s = gather_rows(book, rows);
    // z + sg(s - z): forward equals s, gradient reaches z as if unquantized.
    const Tensor quantized = add(z, stop_gradient(sub(s, z)));
    summed = summed.defined() ? add(summed, quantized) : quantized;

    const Tensor codebook_term = sum(square(sub(stop_gradient(z), s)));
    const Tensor commit_term = sum(square(sub(z, stop_gradient(s))));
    const Tensor term = scale(add(codebook_term, scale(commit_term, beta)), 1.0 / static_cast<double>(n));
    vq = vq.defined() ? add(vq, term) : term;
  }
  out.reconstruction = model.decoder.forward(summed);
  out.loss_recon = scale(sum(square(sub(x, out.reconstruction))), 1.0 / static_cast<double>(n));
  out.vq_loss = vq;
  return out;
}

}  // namespace

OpmqOutput opmq_forward(const Tensor& e_p, const OpmqModel& model) { return forward_impl(e_p, model, {}); }

OpmqOutput opmq_forward(const Tensor& e_p, const OpmqModel& model, std::span<const std::uint32_t> fixed_sids) {
  if (fixed_sids.empty()) throw std::invalid_argument("opmq_forward: empty fixed assignment");
  return forward_impl(e_p, model, fixed_sids);
}

Tensor orth_penalty(const OpmqModel& model) {
  const std::vector<Tensor> flat = model.orth_weights();
  const std::size_t k = flat.size();
  const std::size_t len = flat.front().dim(1);
  const Tensor stacked = reshape(stack_tokens(flat), {k, len});
  const Tensor v = normalize_rows(stacked);
  const Tensor gram = matmul(v, transpose(v));
  return sum(square(sub(gram, Tensor::eye(k))));
}

OpmqTrainResult train_opmq(const data::EmbeddingTable& embeddings, const OpmqConfig& config) {
  if (embeddings.size() == 0) throw std::invalid_argument("train_opmq: empty embedding table");
  if (config.batch_size == 0) throw std::invalid_argument("train_opmq: batch size must be positive");
  OpmqTrainResult result;
  if (embeddings.size() < config.codebook_size) {
    result.warnings.push_back("train_opmq: " + std::to_string(embeddings.size()) + " embeddings for codebooks of " +
                              std::to_string(config.codebook_size) + " codewords");
  }
  OpmqModel model = init_opmq(embeddings.dim(), config, &embeddings);
  result.initial_orth_penalty = orth_penalty(model).item();

  std::vector<Tensor> params = model.parameters();
  OptimizerState opt(OptimizerConfig{OptimizerKind::kAdam, config.lr});
  const std::size_t k = model.num_experts();
  const std::size_t v = model.codebook_size();
  const std::size_t d_z = model.latent_dim();
  std::vector<std::size_t> usage(k * v, 0);
  Rng reseed_rng(derive_seed(config.seed, 2));
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    OpmqEpochLog log;
    log.epoch = epoch + 1;
    double seen = 0.0;
    for (const auto& batch : data::batch_iter(embeddings.size(), config.batch_size, config.seed, epoch)) {
      const Tensor e = embedding_batch(embeddings, batch);
      Tensor total;
      OpmqOutput out;
      Tensor orth;
      try {
        out = opmq_forward(e, model);
        orth = orth_penalty(model);
        total = add(add(out.loss_recon, scale(out.vq_loss, config.vq_weight)), scale(orth, config.orth_weight));
      } catch (const std::domain_error& err) {
        throw std::runtime_error("train_opmq: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                 std::to_string(step) + " (" + err.what() + ")");
      }
      const std::vector<Tensor> grads = grad(total, params);
      optimizer_step(opt, params, grads);

      const double b = static_cast<double>(batch.size());
      log.loss_recon += b * out.loss_recon.item();
      log.vq_loss += b * out.vq_loss.item();
      log.orth_penalty += b * orth.item();
      log.total += b * total.item();
      seen += b;
      for (std::size_t r = 0; r < batch.size(); ++r)
        for (std::size_t i = 0; i < k; ++i) ++usage[i * v + out.sids[r * k + i]];

      ++step;
      if (config.reinit_interval > 0 && step % config.reinit_interval == 0) {
        // Unused codewords restart at a latent from the current batch.
        for (std::size_t i = 0; i < k; ++i) {
          auto book = model.codebooks[i].mutable_values();
          const auto z = out.latents[i].values();
          for (std::size_t j = 0; j < v; ++j) {
            if (usage[i * v + j] != 0) continue;
            const std::size_t r = static_cast<std::size_t>(reseed_rng() % batch.size());
            std::copy_n(z.data() + r * d_z, d_z, book.data() + j * d_z);
            ++log.reseeded_codes;
          }
        }
        std::fill(usage.begin(), usage.end(), 0);
      }
    }
    log.loss_recon /= seen;
    log.vq_loss /= seen;
    log.orth_penalty /= seen;
    log.total /= seen;
    result.log.push_back(log);
  }

  const OpmqOutput final_pass = opmq_forward(all_embeddings(embeddings), model);
  result.final_loss_recon = final_pass.loss_recon.item();
  result.assignments.num_codes = k;
  result.assignments.codebook_size = v;
  result.assignments.item_ids = embeddings.ids();
  result.assignments.codes = final_pass.sids;
  result.model = std::move(model);
  return result;
}

SidTable tokenize_catalog(const data::EmbeddingTable& embeddings, const OpmqModel& model) {
  if (embeddings.dim() != model.input_dim) {
    throw std::invalid_argument("tokenize_catalog: embeddings have dim " + std::to_string(embeddings.dim()) +
                                ", model expects " + std::to_string(model.input_dim));
  }
  SidTable table;
  table.num_codes = model.num_experts();
  table.codebook_size = model.codebook_size();
  table.item_ids = embeddings.ids();
  if (embeddings.size() == 0) return table;
  const std::vector<Tensor> latents = encode_experts(all_embeddings(embeddings), model);
  const std::size_t d_z = model.latent_dim();
  table.codes.resize(embeddings.size() * table.num_codes);
  for (std::size_t r = 0; r < embeddings.size(); ++r)
    for (std::size_t i = 0; i < table.num_codes; ++i) {
      const Codeword c = nearest_codeword(latents[i].values().subspan(r * d_z, d_z), model.codebooks[i]);
      table.codes[r * table.num_codes + i] = static_cast<std::uint32_t>(c.index);
    }
  return table;
}

void save_opmq(const std::filesystem::path& path, const OpmqModel& model) {
  const OpmqConfig& c = model.config;
  nlohmann::json body;
  body["input_dim"] = model.input_dim;
  body["config"] = {{"num_experts", c.num_experts},   {"codebook_size", c.codebook_size},
                    {"latent_dim", c.latent_dim},     {"hidden_dim", c.hidden_dim},
                    {"activation", to_string(c.activation)},
                    {"orth_target", c.orth_target == OrthTarget::kAllLayers ? "all_layers" : "hidden_layer"},
                    {"orth_weight", c.orth_weight},   {"vq_weight", c.vq_weight},
                    {"commitment", c.commitment},     {"epochs", c.epochs},
                    {"batch_size", c.batch_size},     {"lr", c.lr},
                    {"reinit_interval", c.reinit_interval}, {"kmeans_iters", c.kmeans_iters},
                    {"seed", c.seed}};
  for (const Mlp& e : model.experts) body["experts"].push_back(to_json(e));
  for (const Tensor& b : model.codebooks) body["codebooks"].push_back(to_json(b));
  body["decoder"] = to_json(model.decoder);
  write_artifact(path, kMagic, body);
}

OpmqModel load_opmq(const std::filesystem::path& path) {
  const nlohmann::json body = read_artifact(path, kMagic);
  try {
    OpmqModel m;
    m.input_dim = body.at("input_dim").get<std::size_t>();
    const auto& c = body.at("config");
    m.config.num_experts = c.at("num_experts").get<std::size_t>();
    m.config.codebook_size = c.at("codebook_size").get<std::size_t>();
    m.config.latent_dim = c.at("latent_dim").get<std::size_t>();
    m.config.hidden_dim = c.at("hidden_dim").get<std::size_t>();
    m.config.activation = parse_activation(c.at("activation").get<std::string>());
    m.config.orth_target =
        c.at("orth_target").get<std::string>() == "all_layers" ? OrthTarget::kAllLayers : OrthTarget::kHiddenLayer;
    m.config.orth_weight = c.at("orth_weight").get<double>();
    m.config.vq_weight = c.at("vq_weight").get<double>();
    m.config.commitment = c.at("commitment").get<double>();
    m.config.epochs = c.at("epochs").get<std::size_t>();
    m.config.batch_size = c.at("batch_size").get<std::size_t>();
    m.config.lr = c.at("lr").get<double>();
    m.config.reinit_interval = c.at("reinit_interval").get<std::size_t>();
    m.config.kmeans_iters = c.at("kmeans_iters").get<std::size_t>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& e : body.at("experts")) m.experts.push_back(mlp_from_json(e));
    for (const auto& b : body.at("codebooks")) m.codebooks.push_back(tensor_from_json(b));
    m.decoder = mlp_from_json(body.at("decoder"));
    if (m.experts.size() != m.codebooks.size() || m.experts.empty()) {
      throw std::runtime_error("expert/codebook count mismatch");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed OPMQ model: " + e.what());
  }
}

}  // namespace store::tokenizer
