#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "gradcheck.hpp"
#include "store/data.hpp"
#include "store/metrics.hpp"
#include "store/model.hpp"

namespace store::model {
namespace {

using testing::max_rel_error;

data::SyntheticData small_data(std::size_t instances = 400, std::uint64_t seed = 1) {
  data::SyntheticSpec spec;
  spec.n_instances = instances;
  spec.n_items = 60;
  spec.n_users = 40;
  spec.n_clusters = 4;
  spec.seed = seed;
  return data::gen_synthetic(spec);
}

tokenizer::SidTable random_sids(const data::Dataset& ds, std::size_t k, std::size_t v, std::uint64_t seed) {
  tokenizer::SidTable t;
  t.num_codes = k;
  t.codebook_size = v;
  std::vector<std::int64_t> ids = ds.item_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Rng rng(seed);
  std::uniform_int_distribution<std::uint32_t> code(0, static_cast<std::uint32_t>(v - 1));
  for (std::int64_t id : ids) {
    t.item_ids.push_back(id);
    for (std::size_t i = 0; i < k; ++i) t.codes.push_back(code(rng));
  }
  return t;
}

std::vector<std::size_t> first_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

TEST(StoreConfig, JsonRoundTripAndUnknownKeys) {
  StoreConfig c;
  c.layers = 3;
  c.attention.sparsity = 0.25;
  c.groups.groups = {{"g", {"a", "b"}}};
  const StoreConfig back = store_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_THROW(store_config_from_json({{"layerz", 2}}), std::invalid_argument);
}

TEST(StoreConfig, Validation) {
  StoreConfig c;
  c.token_dim = 10;
  c.attention.n_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  StoreConfig z;
  z.num_sids = 0;
  EXPECT_THROW(z.validate(), std::invalid_argument);
}

TEST(BuildTokens, SinglePositionIdentityProjection) {
  const Tensor s = Tensor::from_values({1, 2}, {0.5, -1.0});
  const Tensor c = Tensor::from_values({1, 3}, {1.0, 2.0, 3.0});
  rotation::RotationBank bank;
  bank.matrices = {Tensor::eye(3)};
  std::vector<double> eye(25, 0.0);
  for (std::size_t i = 0; i < 5; ++i) eye[i * 5 + i] = 1.0;
  const Linear proj{Tensor::from_values({5, 5}, eye), Tensor::zeros({5})};
  const std::vector<Tensor> sids = {s};
  const Tensor tokens = build_tokens(sids, c, &bank, proj);
  ASSERT_EQ(tokens.shape(), (Shape{1, 1, 5}));
  const std::vector<double> expect = {0.5, -1.0, 1.0, 2.0, 3.0};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(tokens[i], expect[i]);
}

TEST(Forward, ShapesAcrossRandomConfigs) {
  const auto syn = small_data();
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    StoreConfig c;
    c.num_sids = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    c.codebook_size = 8;
    c.attention.n_heads = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    c.token_dim = 4 * c.attention.n_heads * std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    c.sid_dim = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
    c.layers = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    c.attention.block_size = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    c.attention.sparsity = std::array{0.25, 0.5, 1.0}[trial % 3];
    c.attention.efficient = trial % 4 != 0;
    c.rotation = trial % 5 != 0;
    c.ffn = trial % 2 == 0;
    c.seed = static_cast<std::uint64_t>(trial);
    const StoreModel m = init_store(c, syn.dataset);
    const auto sids = random_sids(syn.dataset, c.num_sids, c.codebook_size, trial);
    const Batch b = make_batch(m, syn.dataset, first_rows(5), &sids);
    const ForwardOutput out = forward(m, syn.dataset, b);
    EXPECT_EQ(out.tokens.shape(), (Shape{5, c.num_sids, c.token_dim})) << "trial " << trial;
    EXPECT_EQ(out.probs.shape(), (Shape{5}));
    for (double p : out.probs.values()) {
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0);
    }
  }
}

TEST(Forward, SidChangeOnlyMovesItsToken) {
  const auto syn = small_data();
  StoreConfig c;
  const StoreModel m = init_store(c, syn.dataset);
  const auto sids = random_sids(syn.dataset, 3, 16, 1);
  Batch b = make_batch(m, syn.dataset, first_rows(4), &sids);
  const Tensor before = forward(m, syn.dataset, b).tokens;
  for (std::size_t r = 0; r < 4; ++r) b.sids[r * 3 + 1] = (b.sids[r * 3 + 1] + 1) % 16;
  const Tensor after = forward(m, syn.dataset, b).tokens;
  const std::size_t d = c.token_dim;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t pos = 0; pos < 3; ++pos) {
      bool moved = false;
      for (std::size_t j = 0; j < d; ++j) moved |= before[(r * 3 + pos) * d + j] != after[(r * 3 + pos) * d + j];
      EXPECT_EQ(moved, pos == 1) << "row " << r << " position " << pos;
    }
}

TEST(Forward, ZeroHeadGivesHalf) {
  const auto syn = small_data();
  StoreModel m = init_store(StoreConfig{}, syn.dataset);
  for (double& v : m.head.weight.mutable_values()) v = 0.0;
  for (double& v : m.head.bias.mutable_values()) v = 0.0;
  const auto sids = random_sids(syn.dataset, 3, 16, 2);
  const ForwardOutput out = forward(m, syn.dataset, make_batch(m, syn.dataset, first_rows(10), &sids));
  for (double p : out.probs.values()) EXPECT_EQ(p, 0.5);
}

TEST(Forward, RawIdSharesOneEmbeddingAcrossPositions) {
  const auto syn = small_data();
  StoreConfig c;
  c.raw_id = true;
  c.rotation = false;
  c.raw_id_buckets = 1024;
  const StoreModel m = init_store(c, syn.dataset);
  const Batch b = make_batch(m, syn.dataset, first_rows(3), nullptr);
  const Tensor tokens = forward(m, syn.dataset, b).tokens;
  const std::size_t d = c.token_dim;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t pos = 1; pos < 3; ++pos)
      for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(tokens[(r * 3 + pos) * d + j], tokens[(r * 3) * d + j]);
}

TEST(Forward, MissingSidIsAnError) {
  const auto syn = small_data();
  const StoreModel m = init_store(StoreConfig{}, syn.dataset);
  tokenizer::SidTable empty;
  empty.num_codes = 3;
  empty.codebook_size = 16;
  EXPECT_THROW(make_batch(m, syn.dataset, first_rows(2), &empty), std::invalid_argument);
  EXPECT_THROW(make_batch(m, syn.dataset, first_rows(2), nullptr), std::invalid_argument);
}

TEST(TotalLoss, BceOracleAndDiversityTerm) {
  const auto syn = small_data();
  const StoreModel m = init_store(StoreConfig{}, syn.dataset);
  const Tensor p = Tensor::from_values({3}, {0.2, 0.7, 0.9});
  const std::vector<double> y = {0, 1, 0};
  const LossParts parts = total_loss(m, p, y);
  const double bce = -(std::log(0.8) + std::log(0.7) + std::log(0.1)) / 3.0;
  EXPECT_NEAR(parts.bce.item(), bce, 1e-9);
  EXPECT_NEAR(parts.total.item(), bce + rotation::diversity_penalty(m.rotations).item(), 1e-12);
  EXPECT_LT(parts.diversity.item(), 0.0);
  const std::vector<double> bad = {0, 2, 1};
  EXPECT_THROW(total_loss(m, p, bad), std::invalid_argument);
}

TEST(FullModelGradient, FrozenRoutingAndSids) {
  const auto syn = small_data();
  StoreConfig c;
  c.num_sids = 3;
  c.token_dim = 8;
  c.layers = 2;
  c.attention.block_size = 1;
  c.attention.sparsity = 0.5;
  c.ffn = true;
  const StoreModel m = init_store(c, syn.dataset);
  const auto sids = random_sids(syn.dataset, 3, 16, 3);
  const Batch b = make_batch(m, syn.dataset, first_rows(4), &sids);
  attention::RoutingTape tape;
  forward(m, syn.dataset, b, &tape);
  ASSERT_FALSE(tape.plans.empty());
  std::vector<Tensor> params = m.network_parameters();
  params.insert(params.end(), m.rotations.matrices.begin(), m.rotations.matrices.end());
  const auto loss = [&] {
    tape.rewind(attention::RoutingTape::Mode::kReplay);
    return total_loss(m, forward(m, syn.dataset, b, &tape).probs, b.labels).total;
  };
  EXPECT_LT(max_rel_error(loss, params), 1e-3);
}

TEST(ModelFlops, SparseBelowVanillaAtIndustrialScale) {
  const auto syn = small_data();
  StoreConfig c;
  c.num_sids = 32;
  c.codebook_size = 300;
  c.token_dim = 64;
  c.attention.block_size = 4;
  c.attention.sparsity = 0.5;
  const double sparse = model_flops(init_store(c, syn.dataset), 256);
  c.attention.efficient = false;
  const double vanilla = model_flops(init_store(c, syn.dataset), 256);
  EXPECT_GT(vanilla / sparse, 1.0);
  c.attention.efficient = true;
  c.attention.sparsity = 1.0;
  EXPECT_EQ(model_flops(init_store(c, syn.dataset), 256), vanilla);
}

StoreConfig quick_fit_config() {
  StoreConfig c;
  c.batch_size = 64;
  c.epochs = 1;
  c.optimizer.lr = 5e-3;
  return c;
}

TEST(Fit, LossDecreasesOverFirstEpoch) {
  const auto syn = small_data(6000);
  const auto sids = random_sids(syn.dataset, 3, 16, 4);
  const data::Dataset empty = syn.dataset.subset({});
  const FitResult r = fit(syn.dataset, empty, quick_fit_config(), &sids);
  const auto& l = r.step_losses;
  ASSERT_GE(l.size(), 40u);
  const double head = std::accumulate(l.begin(), l.begin() + 10, 0.0) / 10.0;
  const double tail = std::accumulate(l.end() - 10, l.end(), 0.0) / 10.0;
  EXPECT_LT(tail, head);
  EXPECT_LT(r.log[0].max_orth_error, 1e-6);
  EXPECT_LT(r.log[0].max_norm_drift, 1e-5);
}

TEST(Fit, SameSeedSameLogs) {
  const auto syn = small_data(1200);
  const auto [train, valid] = data::chronological_split(syn.dataset, 0.25);
  const auto sids = random_sids(syn.dataset, 3, 16, 5);
  StoreConfig c = quick_fit_config();
  c.epochs = 2;
  const FitResult a = fit(train, valid, c, &sids);
  const FitResult b = fit(train, valid, c, &sids);
  ASSERT_EQ(a.log.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) EXPECT_EQ(to_json(a.log[e]).dump(), to_json(b.log[e]).dump());
  EXPECT_EQ(a.step_losses, b.step_losses);
}

TEST(Fit, RequiresSidsUnlessRawId) {
  const auto syn = small_data();
  EXPECT_THROW(fit(syn.dataset, syn.dataset, quick_fit_config(), nullptr), std::invalid_argument);
}

TEST(StoreArtifact, RoundTripPredictsIdentically) {
  const auto syn = small_data(600);
  const auto sids = random_sids(syn.dataset, 3, 16, 6);
  const FitResult r = fit(syn.dataset, syn.dataset.subset({}), quick_fit_config(), &sids);
  const auto path = std::filesystem::temp_directory_path() / "store_model_test.store";
  save_store(path, r.model);
  const StoreModel back = load_store(path);
  EXPECT_EQ(predict(back, syn.dataset, &sids), predict(r.model, syn.dataset, &sids));
  std::filesystem::remove(path);
}

TEST(Logistic, LearnsPlantedSignal) {
  const auto syn = small_data(8000);
  const auto [train, valid] = data::chronological_split(syn.dataset, 0.25);
  const LogisticModel lr = train_logistic(train, LogisticConfig{});
  const std::vector<double> p = predict_logistic(lr, valid);
  std::vector<metrics::EvalRecord> rec(valid.size());
  for (std::size_t r = 0; r < valid.size(); ++r) {
    rec[r] = {valid.labels[r], p[r], valid.group_keys[r]};
    EXPECT_GT(p[r], 0.0);
    EXPECT_LT(p[r], 1.0);
  }
  EXPECT_GT(metrics::auc(rec), 0.6);
}

}  // namespace
}  // namespace store::model
