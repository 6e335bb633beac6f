#pragma once

// Command-line front end.
//
// Settings are layered: built-in defaults, then the preset, then the JSON
// config file (--config), then STORE_SEED from the environment, then flags.
// Every command writes the fully resolved settings to
// <out>/resolved_config.json; passing that file back through --config
// replays the run.
//
// Failures print one line to stderr, "error: <code>: <message>", and return a
// nonzero exit status.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "store/data.hpp"
#include "store/model.hpp"
#include "store/tokenizer.hpp"

namespace store::cli {

struct BenchSettings {
  std::vector<std::size_t> seq_lens = {64, 128, 256, 512};
  std::size_t block_size = 32;
  std::vector<double> sparsities = {1.0, 0.5, 0.25};
  std::size_t d_model = 64;
  std::size_t n_heads = 1;
  std::size_t batch = 4;
  std::size_t reps = 3;
};

struct RunConfig {
  std::string preset = "public";
  std::uint64_t seed = 1;
  std::size_t num_sids = 3;        // K_sid = H
  std::size_t codebook_size = 16;  // V
  std::string tokenizer = "opmq";  // opmq | rq | raw_id
  data::SyntheticSpec synthetic;
  tokenizer::OpmqConfig opmq;
  tokenizer::RqConfig rq;
  model::StoreConfig model;
  double valid_fraction = 0.1;
  double vocab_fraction = 0.9;
  std::string split = "auto";  // auto | chronological | random
  std::size_t cooccurrence_dim = 16;
  BenchSettings bench;

  // Copies the shared knobs (K_sid, V, seed, raw-id switch) into every section.
  void finalize();
  void validate() const;
};

// "public": K_sid = 3, V = 16, B = 1.  "industrial": K_sid = 32, V = 300, B = 4.
RunConfig preset_config(const std::string& name);

nlohmann::json to_json(const RunConfig& config);
// Applies the keys of `j` over `base`. Unknown keys are an error; a top-level
// "run" object (written alongside resolved configs) is ignored.
RunConfig apply_json(const nlohmann::json& j, RunConfig base);

// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace store::cli
