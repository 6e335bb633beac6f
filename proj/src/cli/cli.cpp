#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "store/attention.hpp"
#include "store/cli.hpp"
#include "store/serialize.hpp"

namespace store::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class CliError : public std::runtime_error {
 public:
  CliError(std::string code, const std::string& msg, int status)
      : std::runtime_error(msg), code_(std::move(code)), status_(status) {}
  const std::string& code() const { return code_; }
  int status() const { return status_; }

 private:
  std::string code_;
  int status_;
};

std::string one_line(std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  return msg;
}

CliError config_error(const std::string& msg) { return CliError("config", msg, 3); }
CliError missing(const std::string& what, const fs::path& p) {
  return CliError("missing_artifact", what + " not found: " + p.string(), 4);
}

void require_file(const std::string& what, const fs::path& p) {
  if (p.empty()) throw CliError("missing_artifact", what + " path not given", 4);
  if (!fs::is_regular_file(p)) throw missing(what, p);
}

// Flags shared by all commands, plus optional overrides.
struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  std::string out;

  std::optional<std::size_t> num_sids, codebook_size, epochs, layers, block_size, batch_size, heads;
  std::optional<double> sparsity, lr;
  std::optional<std::string> method, attention;
  bool no_rotation = false;
  bool raw_id = false;
  std::optional<std::size_t> instances, items, users;

  // inputs
  std::string data, embeddings, sids, model;
  std::string split = "valid";
  bool baseline = false;

  // sweep / bench
  std::string param;
  std::vector<double> values;
  std::vector<std::size_t> bench_seq;
  std::vector<double> bench_sparsity;
  std::optional<std::size_t> bench_block, bench_d_model, bench_batch, bench_reps, bench_heads;
};

void add_common(CLI::App* sub, Options& o, bool needs_out = true) {
  sub->add_option("--config", o.config_path, "JSON config file");
  sub->add_option("--seed", o.seed, "Run seed (overrides STORE_SEED and the config)");
  sub->add_option("--preset", o.preset, "public or industrial");
  auto* out = sub->add_option("--out", o.out, "Output directory");
  if (needs_out) out->required();
}

void add_model_flags(CLI::App* sub, Options& o) {
  sub->add_option("--num-sids", o.num_sids, "K_sid = H");
  sub->add_option("--codebook-size", o.codebook_size, "V");
  sub->add_option("--epochs", o.epochs);
  sub->add_option("--layers", o.layers);
  sub->add_option("--block-size", o.block_size);
  sub->add_option("--heads", o.heads);
  sub->add_option("--sparsity", o.sparsity, "Fraction of blocks each query keeps");
  sub->add_option("--batch-size", o.batch_size);
  sub->add_option("--lr", o.lr, "Network learning rate");
  sub->add_option("--attention", o.attention, "efficient or vanilla");
  sub->add_flag("--no-rotation", o.no_rotation, "Disable the rotation of feature blocks");
  sub->add_option("--tokenizer", o.method, "opmq, rq or raw_id");
  sub->add_flag("--raw-id", o.raw_id, "Same as --tokenizer raw_id");
}

RunConfig resolve(const Options& o) {
  try {
    json file = json::object();
    if (!o.config_path.empty()) {
      require_file("config file", o.config_path);
      std::ifstream in(o.config_path);
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw config_error(o.config_path + ": " + e.what());
      }
      if (!file.is_object()) throw config_error(o.config_path + ": top level must be an object");
    }
    std::string preset = "public";
    if (file.contains("preset") && file["preset"].is_string()) preset = file["preset"].get<std::string>();
    if (o.preset) preset = *o.preset;
    RunConfig c = apply_json(file, preset_config(preset));
    c.preset = preset;
    if (const char* env = std::getenv("STORE_SEED"); env && *env) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (*end != '\0' || env[0] == '-') throw config_error(std::string("STORE_SEED is not an unsigned integer: ") + env);
      c.seed = v;
    }
    if (o.seed) c.seed = *o.seed;
    if (o.num_sids) c.num_sids = *o.num_sids;
    if (o.codebook_size) c.codebook_size = *o.codebook_size;
    if (o.epochs) c.model.epochs = *o.epochs;
    if (o.layers) c.model.layers = *o.layers;
    if (o.block_size) c.model.attention.block_size = *o.block_size;
    if (o.heads) c.model.attention.n_heads = *o.heads;
    if (o.sparsity) c.model.attention.sparsity = *o.sparsity;
    if (o.batch_size) c.model.batch_size = *o.batch_size;
    if (o.lr) c.model.optimizer.lr = *o.lr;
    if (o.attention) {
      if (*o.attention != "efficient" && *o.attention != "vanilla") throw config_error("--attention must be efficient or vanilla");
      c.model.attention.efficient = *o.attention == "efficient";
    }
    if (o.no_rotation) c.model.rotation = false;
    if (o.method) c.tokenizer = *o.method;
    if (o.raw_id) c.tokenizer = "raw_id";
    if (o.instances) c.synthetic.n_instances = *o.instances;
    if (o.items) c.synthetic.n_items = *o.items;
    if (o.users) c.synthetic.n_users = *o.users;
    if (!o.bench_seq.empty()) c.bench.seq_lens = o.bench_seq;
    if (!o.bench_sparsity.empty()) c.bench.sparsities = o.bench_sparsity;
    if (o.bench_block) c.bench.block_size = *o.bench_block;
    if (o.bench_d_model) c.bench.d_model = *o.bench_d_model;
    if (o.bench_batch) c.bench.batch = *o.bench_batch;
    if (o.bench_reps) c.bench.reps = *o.bench_reps;
    if (o.bench_heads) c.bench.n_heads = *o.bench_heads;
    c.finalize();
    c.validate();
    return c;
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  } catch (const data::DataError& e) {
    throw config_error(e.what());
  }
}

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw CliError("io", "cannot create output directory " + out, 5);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw CliError("io", "cannot open " + p.string() + " for writing", 5);
  f << text;
  if (!f) throw CliError("io", "failed writing " + p.string(), 5);
}

void write_resolved(const fs::path& dir, const std::string& command, const json& inputs, const RunConfig& c) {
  json j = to_json(c);
  j["run"] = {{"command", command}, {"inputs", inputs}};
  write_text(dir / "resolved_config.json", j.dump(2) + "\n");
}

data::Dataset load_dataset(const std::string& path, const RunConfig& c) {
  require_file("dataset", path);
  {
    std::ifstream in(path, std::ios::binary);
    char magic[6] = {};
    in.read(magic, 5);
    if (std::string(magic) == "STRD1") return data::read_dataset_cache(path);
  }
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  std::vector<std::string> cols;
  std::stringstream ss(header);
  for (std::string t; std::getline(ss, t, ',');) cols.push_back(t);
  const bool own = cols.size() > 3 && cols[0] == "click" && cols[1] == "item_id" && cols[2] == "user_id";
  const data::DatasetSchema schema =
      own ? data::DatasetSchema::from_header(cols, "click", "item_id", "user_id") : data::DatasetSchema::avazu();
  data::ReadOptions opts;
  opts.vocab_fraction = c.vocab_fraction;
  return data::read_avazu_csv(path, schema, opts).dataset;
}

std::pair<data::Dataset, data::Dataset> split_dataset(const data::Dataset& ds, const RunConfig& c) {
  const bool chrono = c.split == "chronological" || (c.split == "auto" && ds.chronological);
  return chrono ? data::chronological_split(ds, c.valid_fraction) : data::random_split(ds, c.valid_fraction, c.seed);
}

tokenizer::SidTable load_sids(const std::string& path) {
  require_file("SID table", path);
  tokenizer::SidTable t = tokenizer::read_sid_table(path);
  t.validate();
  return t;
}

data::EmbeddingTable load_embeddings(const std::string& path) {
  require_file("embedding table", path);
  return data::read_embeddings(path);
}

json epoch_line(const model::EpochLog& l) {
  return {{"epoch", l.epoch},
          {"train_loss", l.train_loss},
          {"val_auc", l.val_auc},
          {"val_gauc", l.val_gauc},
          {"val_logloss", l.val_logloss},
          {"flops_per_batch", l.flops_per_batch}};
}

// Trains the configured tokenizer; writes its artifacts into `dir`.
tokenizer::SidTable train_tokenizer(const RunConfig& c, const data::EmbeddingTable& emb, const fs::path& dir,
                                    std::ostream& out, std::ostream& err) {
  if (c.tokenizer == "opmq") {
    tokenizer::OpmqTrainResult r = tokenizer::train_opmq(emb, c.opmq);
    for (const std::string& w : r.warnings) err << "warning: " << w << '\n';
    std::string log;
    for (const auto& e : r.log) {
      log += json{{"epoch", e.epoch},
                  {"loss_recon", e.loss_recon},
                  {"vq_loss", e.vq_loss},
                  {"orth_penalty", e.orth_penalty},
                  {"total", e.total},
                  {"reseeded_codes", e.reseeded_codes}}
                 .dump() +
             "\n";
    }
    write_text(dir / "tokenizer_log.jsonl", log);
    tokenizer::save_opmq(dir / "tokenizer.opmq", r.model);
    out << json{{"method", "opmq"},
                {"items", emb.size()},
                {"initial_orth_penalty", r.initial_orth_penalty},
                {"final_orth_penalty", tokenizer::orth_penalty(r.model).item()},
                {"final_loss_recon", r.final_loss_recon}}
               .dump()
        << '\n';
    return r.assignments;
  }
  if (c.tokenizer == "rq") {
    tokenizer::RqResult r = tokenizer::train_rq_baseline(emb, c.rq);
    write_text(dir / "rq_log.json", json{{"residual_norms", r.residual_norms}}.dump() + "\n");
    out << json{{"method", "rq"}, {"items", emb.size()}, {"residual_norms", r.residual_norms}}.dump() << '\n';
    return r.sids;
  }
  throw config_error("tokenizer.method raw_id trains no tokenizer");
}

// ---- commands -----------------------------------------------------------------

int cmd_gen_synthetic(const Options& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  const fs::path dir = prepare_out(o.out);
  const data::SyntheticData syn = data::gen_synthetic(c.synthetic);
  data::write_dataset_csv(dir / "data.csv", syn.dataset);
  data::write_dataset_cache(dir / "data.strd", syn.dataset);
  data::write_embeddings(dir / "embeddings.csv", syn.embeddings);
  write_resolved(dir, "gen-synthetic", json::object(), c);
  double clicks = 0.0;
  for (auto y : syn.dataset.labels) clicks += y;
  out << json{{"instances", syn.dataset.size()},
              {"items", syn.embeddings.size()},
              {"ctr", clicks / static_cast<double>(syn.dataset.size())}}
             .dump()
      << '\n';
  return 0;
}

int cmd_train_tokenizer(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve(o);
  if (c.tokenizer == "raw_id") throw config_error("train-tokenizer needs --method opmq or rq");
  data::EmbeddingTable emb;
  json inputs;
  if (!o.embeddings.empty()) {
    emb = load_embeddings(o.embeddings);
    inputs["embeddings"] = o.embeddings;
  } else if (!o.data.empty()) {
    emb = data::cooccurrence_embeddings(load_dataset(o.data, c), c.cooccurrence_dim, c.seed);
    inputs["data"] = o.data;
  } else {
    throw CliError("missing_artifact", "train-tokenizer needs --embeddings or --data", 4);
  }
  const fs::path dir = prepare_out(o.out);
  if (o.embeddings.empty()) data::write_embeddings(dir / "embeddings.csv", emb);
  const tokenizer::SidTable sids = train_tokenizer(c, emb, dir, out, err);
  tokenizer::write_sid_table(dir / "sids.csv", sids);
  write_resolved(dir, "train-tokenizer", inputs, c);
  return 0;
}

int cmd_tokenize(const Options& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  require_file("tokenizer model", o.model);
  const data::EmbeddingTable emb = load_embeddings(o.embeddings);
  const tokenizer::OpmqModel m = tokenizer::load_opmq(o.model);
  const fs::path dir = prepare_out(o.out);
  const tokenizer::SidTable sids = tokenizer::tokenize_catalog(emb, m);
  tokenizer::write_sid_table(dir / "sids.csv", sids);
  write_resolved(dir, "tokenize", {{"model", o.model}, {"embeddings", o.embeddings}}, c);
  out << json{{"items", sids.size()}, {"K", sids.num_codes}, {"V", sids.codebook_size}}.dump() << '\n';
  return 0;
}

struct TrainInputs {
  std::optional<tokenizer::SidTable> sids;
  data::Dataset train, valid;
};

TrainInputs prepare_training(const Options& o, const RunConfig& c) {
  // Flag contract first, before anything is read.
  if (c.tokenizer == "raw_id" && (!o.sids.empty() || !o.model.empty() || !o.embeddings.empty())) {
    throw config_error("raw_id ablation cannot be combined with a tokenizer or SID path");
  }
  if (c.tokenizer != "raw_id" && o.sids.empty() && o.embeddings.empty()) {
    throw CliError("missing_artifact", "the " + c.tokenizer + " tokenizer needs --sids (or --embeddings to train one)", 4);
  }
  if (o.data.empty()) throw CliError("missing_artifact", "--data is required", 4);
  TrainInputs in;
  if (!o.sids.empty()) in.sids = load_sids(o.sids);
  std::tie(in.train, in.valid) = split_dataset(load_dataset(o.data, c), c);
  return in;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve(o);
  TrainInputs in = prepare_training(o, c);
  const fs::path dir = prepare_out(o.out);
  if (!in.sids && c.tokenizer != "raw_id") in.sids = train_tokenizer(c, load_embeddings(o.embeddings), dir, out, err);

  std::string log;
  model::FitResult r = model::fit(in.train, in.valid, c.model, in.sids ? &*in.sids : nullptr, [&](const model::EpochLog& l) {
    const std::string line = epoch_line(l).dump();
    log += line + "\n";
    out << line << '\n';
  });
  write_text(dir / "epoch_log.jsonl", log);
  model::save_store(dir / "model.store", r.model);
  if (o.baseline) {
    const model::LogisticModel lr = model::train_logistic(in.train, {.seed = c.seed});
    const std::vector<double> p = model::predict_logistic(lr, in.valid);
    std::vector<metrics::EvalRecord> rec(in.valid.size());
    for (std::size_t i = 0; i < rec.size(); ++i) rec[i] = {in.valid.labels[i], p[i], in.valid.group_keys[i]};
    const metrics::Summary s = metrics::evaluate(rec);
    const json b{{"model", "logistic_one_hot"}, {"val_auc", s.auc}, {"val_gauc", s.gauc}, {"val_logloss", s.logloss}};
    write_text(dir / "baseline.json", b.dump() + "\n");
    out << b.dump() << '\n';
  }
  json inputs{{"data", o.data}};
  if (!o.sids.empty()) inputs["sids"] = o.sids;
  if (!o.embeddings.empty()) inputs["embeddings"] = o.embeddings;
  write_resolved(dir, "train", inputs, c);
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  require_file("model", o.model);
  const model::StoreModel m = model::load_store(o.model);
  if (m.config.raw_id && !o.sids.empty()) throw config_error("the model is a raw_id model; drop --sids");
  if (!m.config.raw_id && o.sids.empty()) throw CliError("missing_artifact", "--sids is required for a SID model", 4);
  std::optional<tokenizer::SidTable> sids;
  if (!o.sids.empty()) sids = load_sids(o.sids);
  if (o.data.empty()) throw CliError("missing_artifact", "--data is required", 4);
  data::Dataset ds = load_dataset(o.data, c);
  if (o.split != "all") {
    auto [tr, va] = split_dataset(ds, c);
    if (o.split == "valid") ds = std::move(va);
    else if (o.split == "train") ds = std::move(tr);
    else throw config_error("--split must be valid, train or all");
  }
  const metrics::Summary s = model::evaluate(m, ds, sids ? &*sids : nullptr);
  const json res{{"split", o.split}, {"n", ds.size()}, {"auc", s.auc}, {"gauc", s.gauc}, {"logloss", s.logloss}};
  out << res.dump() << '\n';
  if (!o.out.empty()) {
    const fs::path dir = prepare_out(o.out);
    write_text(dir / "metrics.json", res.dump() + "\n");
    write_resolved(dir, "eval", {{"model", o.model}, {"data", o.data}, {"sids", o.sids}, {"split", o.split}}, c);
  }
  return 0;
}

int cmd_bench(const Options& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  const fs::path dir = prepare_out(o.out);
  const BenchSettings& b = c.bench;
  std::string csv = "H,B,k_blocks,dense_flops,sparse_flops,wall_time_dense_ms,wall_time_sparse_ms,max_abs_diff_at_rho1\n";
  for (std::size_t h : b.seq_lens)
    for (double rho : b.sparsities) {
      const attention::BenchRow r =
          attention::bench_attention(h, b.block_size, rho, b.d_model, b.n_heads, b.batch, b.reps, c.seed);
      std::ostringstream line;
      line << r.seq_len << ',' << r.block_size << ',' << r.k_blocks << ',' << format_double(r.dense_flops) << ','
           << format_double(r.sparse_flops) << ',' << format_double(r.wall_time_dense_ms) << ','
           << format_double(r.wall_time_sparse_ms) << ',' << format_double(r.max_abs_diff_at_rho1) << '\n';
      csv += line.str();
      out << line.str();
    }
  write_text(dir / "bench.csv", csv);
  write_resolved(dir, "bench-attention", json::object(), c);
  return 0;
}

int cmd_sweep(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig base = resolve(o);
  if (o.param != "rho" && o.param != "epochs" && o.param != "k_sid" && o.param != "layers") {
    throw config_error("--param must be rho, epochs, k_sid or layers");
  }
  if (o.values.empty()) throw config_error("--values is empty");
  if (o.param == "k_sid" && base.tokenizer == "raw_id") throw config_error("a k_sid sweep needs a SID tokenizer");
  if (o.param == "k_sid" && o.embeddings.empty()) {
    throw CliError("missing_artifact", "a k_sid sweep retrains the tokenizer and needs --embeddings", 4);
  }
  TrainInputs in = prepare_training(o, base);
  const fs::path dir = prepare_out(o.out);
  std::optional<data::EmbeddingTable> emb;
  if (!o.embeddings.empty()) emb = load_embeddings(o.embeddings);

  std::string summary;
  for (double v : o.values) {
    RunConfig c = base;
    if (o.param == "rho") c.model.attention.sparsity = v;
    else {
      if (v < 1.0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
        throw config_error("--values for " + o.param + " must be positive integers");
      }
      const auto n = static_cast<std::size_t>(v);
      if (o.param == "epochs") c.model.epochs = n;
      else if (o.param == "layers") c.model.layers = n;
      else c.num_sids = n;
    }
    c.finalize();
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw config_error(e.what());
    }
    const fs::path sub = prepare_out((dir / (o.param + "_" + format_double(v))).string());
    std::optional<tokenizer::SidTable> sids = in.sids;
    if (c.tokenizer != "raw_id" && (o.param == "k_sid" || !sids)) {
      std::ostringstream quiet;
      sids = train_tokenizer(c, *emb, sub, quiet, err);
      tokenizer::write_sid_table(sub / "sids.csv", *sids);
    }
    std::string log;
    model::FitResult r = model::fit(in.train, in.valid, c.model, sids ? &*sids : nullptr,
                                    [&](const model::EpochLog& l) { log += epoch_line(l).dump() + "\n"; });
    write_text(sub / "epoch_log.jsonl", log);
    const model::EpochLog& last = r.log.back();
    const json rec{{"param", o.param},
                   {"value", v},
                   {"epochs", r.log.size()},
                   {"val_auc", last.val_auc},
                   {"val_gauc", last.val_gauc},
                   {"val_logloss", last.val_logloss},
                   {"flops_per_batch", last.flops_per_batch}};
    summary += rec.dump() + "\n";
    out << rec.dump() << '\n';
  }
  write_text(dir / "sweep.jsonl", summary);
  json inputs{{"data", o.data}, {"param", o.param}, {"values", o.values}};
  if (!o.sids.empty()) inputs["sids"] = o.sids;
  if (!o.embeddings.empty()) inputs["embeddings"] = o.embeddings;
  write_resolved(dir, "sweep", inputs, base);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"store: semantic-id tokenization, rotation and block-sparse attention for CTR ranking", "store"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic CTR dataset and item embeddings");
  add_common(gen, o);
  gen->add_option("--instances", o.instances);
  gen->add_option("--items", o.items);
  gen->add_option("--users", o.users);

  auto* tt = app.add_subcommand("train-tokenizer", "Train the OPMQ or residual tokenizer and emit SIDs");
  add_common(tt, o);
  tt->add_option("--embeddings", o.embeddings, "Item embedding CSV");
  tt->add_option("--data", o.data, "Dataset to derive co-occurrence embeddings from");
  tt->add_option("--method", o.method, "opmq or rq");
  tt->add_option("--num-sids", o.num_sids);
  tt->add_option("--codebook-size", o.codebook_size);

  auto* tok = app.add_subcommand("tokenize", "Assign SIDs with a trained OPMQ model");
  add_common(tok, o);
  tok->add_option("--model", o.model, "tokenizer.opmq")->required();
  tok->add_option("--embeddings", o.embeddings)->required();

  auto* train = app.add_subcommand("train", "Train the ranking model");
  add_common(train, o);
  add_model_flags(train, o);
  train->add_option("--data", o.data, "Dataset CSV or STRD1 cache");
  train->add_option("--sids", o.sids, "SID table");
  train->add_option("--embeddings", o.embeddings, "Train the tokenizer first from these embeddings");
  train->add_flag("--baseline", o.baseline, "Also fit logistic regression on one-hot features");

  auto* ev = app.add_subcommand("eval", "Evaluate a trained model");
  add_common(ev, o, false);
  ev->add_option("--model", o.model, "model.store")->required();
  ev->add_option("--data", o.data);
  ev->add_option("--sids", o.sids);
  ev->add_option("--split", o.split, "valid, train or all");

  auto* bench = app.add_subcommand("bench-attention", "Dense vs block-sparse attention cost and timing");
  add_common(bench, o);
  bench->add_option("--seq", o.bench_seq)->delimiter(',');
  bench->add_option("--sparsity", o.bench_sparsity)->delimiter(',');
  bench->add_option("--block", o.bench_block);
  bench->add_option("--d-model", o.bench_d_model);
  bench->add_option("--batch", o.bench_batch);
  bench->add_option("--reps", o.bench_reps);
  bench->add_option("--heads", o.bench_heads);

  auto* sweep = app.add_subcommand("sweep", "Train once per value of one setting");
  add_common(sweep, o);
  add_model_flags(sweep, o);
  sweep->add_option("--param", o.param, "rho, epochs, k_sid or layers")->required();
  sweep->add_option("--values", o.values, "Comma-separated values")->delimiter(',')->required();
  sweep->add_option("--data", o.data);
  sweep->add_option("--sids", o.sids);
  sweep->add_option("--embeddings", o.embeddings);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }
  try {
    if (gen->parsed()) return cmd_gen_synthetic(o, out);
    if (tt->parsed()) return cmd_train_tokenizer(o, out, err);
    if (tok->parsed()) return cmd_tokenize(o, out);
    if (train->parsed()) return cmd_train(o, out, err);
    if (ev->parsed()) return cmd_eval(o, out);
    if (bench->parsed()) return cmd_bench(o, out);
    if (sweep->parsed()) return cmd_sweep(o, out, err);
  } catch (const CliError& e) {
    err << "error: " << e.code() << ": " << one_line(e.what()) << '\n';
    return e.status();
  } catch (const data::DataError& e) {
    err << "error: data: " << one_line(e.what()) << '\n';
    return 6;
  } catch (const std::invalid_argument& e) {
    err << "error: invalid_argument: " << one_line(e.what()) << '\n';
    return 7;
  } catch (const std::exception& e) {
    err << "error: runtime: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace store::cli
