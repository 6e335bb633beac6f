#include <stdexcept>

#include "store/cli.hpp"

namespace store::cli {

using nlohmann::json;

namespace {

// Shared knobs live at the top level only.
constexpr const char* kTopLevelOnly[] = {"num_sids", "codebook_size", "seed", "raw_id"};

[[noreturn]] void bad(const std::string& key, const json& v) {
  throw std::invalid_argument("config: bad value for '" + key + "': " + v.dump());
}

std::size_t as_size(const json& v, const std::string& key) {
  if (v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0)) return v.get<std::size_t>();
  bad(key, v);
}

double as_real(const json& v, const std::string& key) {
  if (!v.is_number()) bad(key, v);
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) bad(key, v);
  return v.get<std::string>();
}

std::uint64_t as_u64(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) bad(key, v);
  return v.get<std::uint64_t>();
}

[[noreturn]] void unknown(const std::string& key) { throw std::invalid_argument("config: unknown key '" + key + "'"); }

json synthetic_json(const data::SyntheticSpec& s) {
  return {{"n_instances", s.n_instances},
          {"n_items", s.n_items},
          {"n_users", s.n_users},
          {"d_p", s.d_p},
          {"n_clusters", s.n_clusters},
          {"static_groups", s.static_groups},
          {"cluster_spread", s.cluster_spread},
          {"item_noise", s.item_noise},
          {"bias", s.bias},
          {"main_effect_scale", s.main_effect_scale},
          {"pair_scale", s.pair_scale},
          {"n_pairs", s.n_pairs},
          {"cluster_scale", s.cluster_scale},
          {"item_effect_scale", s.item_effect_scale},
          {"logit_scale", s.logit_scale},
          {"label_noise", s.label_noise}};
}

void apply_synthetic(const json& j, data::SyntheticSpec& s) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = "synthetic." + k;
    if (k == "n_instances") s.n_instances = as_size(v, key);
    else if (k == "n_items") s.n_items = as_size(v, key);
    else if (k == "n_users") s.n_users = as_size(v, key);
    else if (k == "d_p") s.d_p = as_size(v, key);
    else if (k == "n_clusters") s.n_clusters = as_size(v, key);
    else if (k == "static_groups") {
      try {
        s.static_groups = v.get<std::vector<std::vector<std::size_t>>>();
      } catch (const json::exception&) {
        bad(key, v);
      }
    } else if (k == "cluster_spread") s.cluster_spread = as_real(v, key);
    else if (k == "item_noise") s.item_noise = as_real(v, key);
    else if (k == "bias") s.bias = as_real(v, key);
    else if (k == "main_effect_scale") s.main_effect_scale = as_real(v, key);
    else if (k == "pair_scale") s.pair_scale = as_real(v, key);
    else if (k == "n_pairs") s.n_pairs = as_size(v, key);
    else if (k == "cluster_scale") s.cluster_scale = as_real(v, key);
    else if (k == "item_effect_scale") s.item_effect_scale = as_real(v, key);
    else if (k == "logit_scale") s.logit_scale = as_real(v, key);
    else if (k == "label_noise") s.label_noise = as_real(v, key);
    else unknown(key);
  }
}

json tokenizer_json(const RunConfig& c) {
  const tokenizer::OpmqConfig& o = c.opmq;
  return {{"method", c.tokenizer},
          {"latent_dim", o.latent_dim},
          {"hidden_dim", o.hidden_dim},
          {"activation", to_string(o.activation)},
          {"orth_target", o.orth_target == tokenizer::OrthTarget::kAllLayers ? "all_layers" : "hidden_layer"},
          {"orth_weight", o.orth_weight},
          {"vq_weight", o.vq_weight},
          {"commitment", o.commitment},
          {"epochs", o.epochs},
          {"batch_size", o.batch_size},
          {"lr", o.lr},
          {"reinit_interval", o.reinit_interval},
          {"kmeans_iters", o.kmeans_iters},
          {"rq_iters", c.rq.iters}};
}

void apply_tokenizer(const json& j, RunConfig& c) {
  tokenizer::OpmqConfig& o = c.opmq;
  for (const auto& [k, v] : j.items()) {
    const std::string key = "tokenizer." + k;
    if (k == "method") c.tokenizer = as_string(v, key);
    else if (k == "latent_dim") o.latent_dim = as_size(v, key);
    else if (k == "hidden_dim") o.hidden_dim = as_size(v, key);
    else if (k == "activation") o.activation = parse_activation(as_string(v, key));
    else if (k == "orth_target") {
      const std::string t = as_string(v, key);
      if (t == "hidden_layer") o.orth_target = tokenizer::OrthTarget::kHiddenLayer;
      else if (t == "all_layers") o.orth_target = tokenizer::OrthTarget::kAllLayers;
      else bad(key, v);
    } else if (k == "orth_weight") o.orth_weight = as_real(v, key);
    else if (k == "vq_weight") o.vq_weight = as_real(v, key);
    else if (k == "commitment") o.commitment = as_real(v, key);
    else if (k == "epochs") o.epochs = as_size(v, key);
    else if (k == "batch_size") o.batch_size = as_size(v, key);
    else if (k == "lr") o.lr = as_real(v, key);
    else if (k == "reinit_interval") o.reinit_interval = as_size(v, key);
    else if (k == "kmeans_iters") o.kmeans_iters = as_size(v, key);
    else if (k == "rq_iters") c.rq.iters = as_size(v, key);
    else unknown(key);
  }
}

json bench_json(const BenchSettings& b) {
  return {{"seq_lens", b.seq_lens}, {"block_size", b.block_size}, {"sparsities", b.sparsities},
          {"d_model", b.d_model},   {"heads", b.n_heads},         {"batch", b.batch},
          {"reps", b.reps}};
}

void apply_bench(const json& j, BenchSettings& b) {
  for (const auto& [k, v] : j.items()) {
    const std::string key = "bench." + k;
    try {
      if (k == "seq_lens") b.seq_lens = v.get<std::vector<std::size_t>>();
      else if (k == "block_size") b.block_size = as_size(v, key);
      else if (k == "sparsities") b.sparsities = v.get<std::vector<double>>();
      else if (k == "d_model") b.d_model = as_size(v, key);
      else if (k == "heads") b.n_heads = as_size(v, key);
      else if (k == "batch") b.batch = as_size(v, key);
      else if (k == "reps") b.reps = as_size(v, key);
      else unknown(key);
    } catch (const json::exception&) {
      bad(key, v);
    }
  }
}

}  // namespace

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "public") {
    c.num_sids = 3;
    c.codebook_size = 16;
    c.model.attention.block_size = 1;
  } else if (name == "industrial") {
    c.num_sids = 32;
    c.codebook_size = 300;
    c.model.attention.block_size = 4;
  } else {
    throw std::invalid_argument("config: unknown preset '" + name + "' (expected public or industrial)");
  }
  c.finalize();
  return c;
}

void RunConfig::finalize() {
  opmq.num_experts = num_sids;
  opmq.codebook_size = codebook_size;
  opmq.seed = seed;
  rq.num_codes = num_sids;
  rq.codebook_size = codebook_size;
  rq.seed = seed;
  model.num_sids = num_sids;
  model.codebook_size = codebook_size;
  model.seed = seed;
  model.raw_id = tokenizer == "raw_id";
  synthetic.seed = seed;
}

void RunConfig::validate() const {
  if (tokenizer != "opmq" && tokenizer != "rq" && tokenizer != "raw_id") {
    throw std::invalid_argument("config: tokenizer.method must be opmq, rq or raw_id, got '" + tokenizer + "'");
  }
  if (split != "auto" && split != "chronological" && split != "random") {
    throw std::invalid_argument("config: data.split must be auto, chronological or random");
  }
  if (!(valid_fraction >= 0.0 && valid_fraction < 1.0)) throw std::invalid_argument("config: data.valid_fraction must be in [0, 1)");
  if (!(vocab_fraction > 0.0 && vocab_fraction <= 1.0)) throw std::invalid_argument("config: data.vocab_fraction must be in (0, 1]");
  if (cooccurrence_dim == 0) throw std::invalid_argument("config: data.cooccurrence_dim must be positive");
  if (opmq.epochs == 0 || opmq.batch_size == 0 || !(opmq.lr > 0.0)) throw std::invalid_argument("config: invalid tokenizer training settings");
  synthetic.validate();
  model.validate();
}

json to_json(const RunConfig& c) {
  json m = model::to_json(c.model);
  for (const char* k : kTopLevelOnly) m.erase(k);
  return {{"preset", c.preset},
          {"seed", c.seed},
          {"num_sids", c.num_sids},
          {"codebook_size", c.codebook_size},
          {"synthetic", synthetic_json(c.synthetic)},
          {"tokenizer", tokenizer_json(c)},
          {"model", m},
          {"data",
           {{"valid_fraction", c.valid_fraction},
            {"vocab_fraction", c.vocab_fraction},
            {"split", c.split},
            {"cooccurrence_dim", c.cooccurrence_dim}}},
          {"bench", bench_json(c.bench)}};
}

RunConfig apply_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k == "run") continue;
    if (k == "preset") c.preset = as_string(v, k);
    else if (k == "seed") c.seed = as_u64(v, k);
    else if (k == "num_sids") c.num_sids = as_size(v, k);
    else if (k == "codebook_size") c.codebook_size = as_size(v, k);
    else if (k == "synthetic") apply_synthetic(v, c.synthetic);
    else if (k == "tokenizer") apply_tokenizer(v, c);
    else if (k == "model") {
      if (!v.is_object()) bad(k, v);
      for (const char* shared : kTopLevelOnly) {
        if (v.contains(shared)) {
          throw std::invalid_argument(std::string("config: 'model.") + shared + "' is set at the top level" +
                                      (std::string(shared) == "raw_id" ? " (tokenizer.method = raw_id)" : ""));
        }
      }
      c.model = model::store_config_from_json(v, c.model);
    } else if (k == "data") {
      for (const auto& [dk, dv] : v.items()) {
        const std::string key = "data." + dk;
        if (dk == "valid_fraction") c.valid_fraction = as_real(dv, key);
        else if (dk == "vocab_fraction") c.vocab_fraction = as_real(dv, key);
        else if (dk == "split") c.split = as_string(dv, key);
        else if (dk == "cooccurrence_dim") c.cooccurrence_dim = as_size(dv, key);
        else unknown(key);
      }
    } else if (k == "bench") apply_bench(v, c.bench);
    else unknown(k);
  }
  return c;
}

}  // namespace store::cli
