#include <cmath>
#include <stdexcept>

#include "store/model.hpp"

namespace store::model {

using nlohmann::json;

void StoreConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (num_sids == 0) fail("num_sids must be >= 1");
  if (codebook_size == 0) fail("codebook_size must be >= 1");
  if (sid_dim == 0 || token_dim == 0) fail("sid_dim and token_dim must be positive");
  if (layers == 0) fail("layers must be >= 1");
  attention.validate(token_dim);
  if (!(diversity_weight >= 0.0)) fail("diversity_weight must be >= 0");
  if (!(rotation_lr >= 0.0)) fail("rotation_lr must be >= 0");
  if (rotation_interval == 0) fail("rotation_interval must be >= 1");
  if (raw_id && raw_id_buckets == 0) fail("raw_id_buckets must be positive");
  if (groups.embed_dim == 0 || groups.fused_dim == 0) fail("group dims must be positive");
  if (!(optimizer.lr > 0.0)) fail("optimizer lr must be positive");
  if (batch_size == 0 || eval_batch_size == 0) fail("batch sizes must be positive");
}

json to_json(const StoreConfig& c) {
  json groups = json::array();
  for (const auto& g : c.groups.groups) groups.push_back({{"name", g.name}, {"features", g.features}});
  return {
      {"num_sids", c.num_sids},
      {"codebook_size", c.codebook_size},
      {"sid_dim", c.sid_dim},
      {"token_dim", c.token_dim},
      {"layers", c.layers},
      {"heads", c.attention.n_heads},
      {"block_size", c.attention.block_size},
      {"sparsity", c.attention.sparsity},
      {"force_own_block", c.attention.force_own_block},
      {"attention", c.attention.efficient ? "efficient" : "vanilla"},
      {"rotation", c.rotation},
      {"diversity_weight", c.diversity_weight},
      {"rotation_lr", c.rotation_lr},
      {"rotation_interval", c.rotation_interval},
      {"ffn", c.ffn},
      {"raw_id", c.raw_id},
      {"raw_id_buckets", c.raw_id_buckets},
      {"groups", {{"embed_dim", c.groups.embed_dim}, {"fused_dim", c.groups.fused_dim}, {"groups", groups}}},
      {"optimizer",
       {{"kind", to_string(c.optimizer.kind)},
        {"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps}}},
      {"batch_size", c.batch_size},
      {"eval_batch_size", c.eval_batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed},
  };
}

namespace {

template <typename T>
T get(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: bad value for '" + key + "': " + v.dump());
  }
}

std::size_t get_size(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw std::invalid_argument("config: '" + key + "' must be a non-negative integer, got " + v.dump());
  }
  return v.get<std::size_t>();
}

double get_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw std::invalid_argument("config: '" + key + "' must be a number, got " + v.dump());
  return v.get<double>();
}

}  // namespace

StoreConfig store_config_from_json(const json& j, StoreConfig c) {
  if (!j.is_object()) throw std::invalid_argument("config: model section must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "num_sids") c.num_sids = get_size(v, key);
    else if (key == "codebook_size") c.codebook_size = get_size(v, key);
    else if (key == "sid_dim") c.sid_dim = get_size(v, key);
    else if (key == "token_dim") c.token_dim = get_size(v, key);
    else if (key == "layers") c.layers = get_size(v, key);
    else if (key == "heads") c.attention.n_heads = get_size(v, key);
    else if (key == "block_size") c.attention.block_size = get_size(v, key);
    else if (key == "sparsity") c.attention.sparsity = get_real(v, key);
    else if (key == "force_own_block") c.attention.force_own_block = get<bool>(v, key);
    else if (key == "attention") {
      const std::string a = get<std::string>(v, key);
      if (a != "efficient" && a != "vanilla") throw std::invalid_argument("config: attention must be efficient or vanilla");
      c.attention.efficient = a == "efficient";
    } else if (key == "rotation") c.rotation = get<bool>(v, key);
    else if (key == "diversity_weight") c.diversity_weight = get_real(v, key);
    else if (key == "rotation_lr") c.rotation_lr = get_real(v, key);
    else if (key == "rotation_interval") c.rotation_interval = get_size(v, key);
    else if (key == "ffn") c.ffn = get<bool>(v, key);
    else if (key == "raw_id") c.raw_id = get<bool>(v, key);
    else if (key == "raw_id_buckets") c.raw_id_buckets = get_size(v, key);
    else if (key == "groups") {
      for (const auto& [gk, gv] : v.items()) {
        if (gk == "embed_dim") c.groups.embed_dim = get_size(gv, gk);
        else if (gk == "fused_dim") c.groups.fused_dim = get_size(gv, gk);
        else if (gk == "groups") {
          c.groups.groups.clear();
          for (const auto& g : gv) {
            c.groups.groups.push_back({get<std::string>(g.at("name"), "groups.name"),
                                       get<std::vector<std::string>>(g.at("features"), "groups.features")});
          }
        } else throw std::invalid_argument("config: unknown key 'groups." + gk + "'");
      }
    } else if (key == "optimizer") {
      for (const auto& [ok, ov] : v.items()) {
        if (ok == "kind") c.optimizer.kind = parse_optimizer(get<std::string>(ov, ok));
        else if (ok == "lr") c.optimizer.lr = get_real(ov, ok);
        else if (ok == "beta1") c.optimizer.beta1 = get_real(ov, ok);
        else if (ok == "beta2") c.optimizer.beta2 = get_real(ov, ok);
        else if (ok == "eps") c.optimizer.eps = get_real(ov, ok);
        else throw std::invalid_argument("config: unknown key 'optimizer." + ok + "'");
      }
    } else if (key == "batch_size") c.batch_size = get_size(v, key);
    else if (key == "eval_batch_size") c.eval_batch_size = get_size(v, key);
    else if (key == "epochs") c.epochs = get_size(v, key);
    else if (key == "seed") c.seed = get<std::uint64_t>(v, key);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  return c;
}

json to_json(const EpochLog& log) {
  return {{"epoch", log.epoch},
          {"train_loss", log.train_loss},
          {"val_auc", log.val_auc},
          {"val_gauc", log.val_gauc},
          {"val_logloss", log.val_logloss},
          {"flops_per_batch", log.flops_per_batch},
          {"max_orth_error", log.max_orth_error},
          {"max_norm_drift", log.max_norm_drift},
          {"steps", log.steps}};
}

}  // namespace store::model
