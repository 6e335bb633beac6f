#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "store/data.hpp"

namespace store::data {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("store_data_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                                 ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

DatasetSchema toy_schema() {
  const std::vector<std::string> header = {"click", "site", "user", "color", "size"};
  return DatasetSchema::from_header(header, "click", "site", "user");
}

TEST(ReadCsv, ToyFileRoundTrips) {
  TempDir dir;
  write_text(dir / "toy.csv", "click,site,user,color,size\n1,10,7,red,S\n0,11,7,blue,M\n1,10,8,red,L\n");
  ReadOptions opt;
  opt.vocab_fraction = 1.0;
  const ReadResult r = read_avazu_csv(dir / "toy.csv", toy_schema(), opt);
  const Dataset& ds = r.dataset;
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.labels, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_EQ(ds.item_ids, (std::vector<std::int64_t>{10, 11, 10}));
  EXPECT_EQ(ds.group_keys, (std::vector<std::int64_t>{7, 7, 8}));
  EXPECT_EQ(ds.static_names, (std::vector<std::string>{"color", "size"}));
  EXPECT_EQ(ds.cardinalities, (std::vector<std::size_t>{3, 4}));
  EXPECT_EQ(ds.static_value(0, 0), ds.static_value(2, 0));
  EXPECT_NE(ds.static_value(0, 0), ds.static_value(1, 0));
  EXPECT_EQ(r.vocabularies[0].tokens()[static_cast<std::size_t>(ds.static_value(1, 0)) - 1], "blue");

  write_dataset_csv(dir / "back.csv", ds);
  const std::vector<std::string> header = {"click", "item_id", "user_id", "color", "size"};
  const ReadResult back =
      read_avazu_csv(dir / "back.csv", DatasetSchema::from_header(header, "click", "item_id", "user_id"), opt);
  EXPECT_EQ(back.dataset.labels, ds.labels);
  EXPECT_EQ(back.dataset.item_ids, ds.item_ids);
  EXPECT_EQ(back.dataset.group_keys, ds.group_keys);
}

TEST(ReadCsv, UnseenCategoryIsOov) {
  TempDir dir;
  write_text(dir / "toy.csv", "click,site,user,color,size\n1,1,1,red,S\n0,1,1,red,S\n1,2,2,green,XL\n");
  ReadOptions opt;
  opt.vocab_fraction = 0.5;
  const Dataset ds = read_avazu_csv(dir / "toy.csv", toy_schema(), opt).dataset;
  EXPECT_EQ(ds.static_value(2, 0), 0);
  EXPECT_EQ(ds.static_value(2, 1), 0);
  EXPECT_NE(ds.static_value(0, 0), 0);
}

TEST(ReadCsv, FieldCountErrorNamesLine) {
  TempDir dir;
  write_text(dir / "bad.csv", "click,site,user,color,size\n1,1,1,red,S\n0,1,1,red\n");
  try {
    read_avazu_csv(dir / "bad.csv", toy_schema());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  ReadOptions skip;
  skip.skip_malformed = true;
  const ReadResult r = read_avazu_csv(dir / "bad.csv", toy_schema(), skip);
  EXPECT_EQ(r.skipped_rows, 1u);
  EXPECT_EQ(r.dataset.size(), 1u);
}

TEST(ReadCsv, MissingSchemaColumn) {
  TempDir dir;
  write_text(dir / "toy.csv", "click,site,color\n1,1,red\n");
  EXPECT_THROW(read_avazu_csv(dir / "toy.csv", toy_schema()), DataError);
}

TEST(ParseKey, NumericAndHashed) {
  EXPECT_EQ(parse_key("123"), 123);
  EXPECT_EQ(parse_key("1fbe01fe"), parse_key("1fbe01fe"));
  EXPECT_NE(parse_key("1fbe01fe"), parse_key("1fbe01ff"));
  EXPECT_GE(parse_key("zzz"), 0);
}

SyntheticSpec small_spec(std::size_t n = 2000) {
  SyntheticSpec s;
  s.n_instances = n;
  s.n_items = 100;
  s.n_users = 50;
  return s;
}

TEST(Synthetic, SaturatedLogitsGiveDeterministicLabels) {
  SyntheticSpec s = small_spec();
  s.logit_scale = 1e4;
  const SyntheticData d = gen_synthetic(s);
  std::size_t saturated = 0;
  for (std::size_t r = 0; r < d.dataset.size(); ++r) {
    if (std::abs(d.planted_score[r]) < 40.0) continue;
    ++saturated;
    EXPECT_EQ(d.dataset.labels[r], d.planted_score[r] > 0 ? 1 : 0);
  }
  EXPECT_GT(saturated, d.dataset.size() * 9 / 10);
}

TEST(Synthetic, SameSeedSameFiles) {
  TempDir dir;
  const SyntheticData a = gen_synthetic(small_spec());
  const SyntheticData b = gen_synthetic(small_spec());
  write_dataset_csv(dir / "a.csv", a.dataset);
  write_dataset_csv(dir / "b.csv", b.dataset);
  write_embeddings(dir / "a.emb", a.embeddings);
  write_embeddings(dir / "b.emb", b.embeddings);
  EXPECT_EQ(read_bytes(dir / "a.csv"), read_bytes(dir / "b.csv"));
  EXPECT_EQ(read_bytes(dir / "a.emb"), read_bytes(dir / "b.emb"));
  SyntheticSpec other = small_spec();
  other.seed = 2;
  EXPECT_NE(gen_synthetic(other).dataset.labels, a.dataset.labels);
}

TEST(Synthetic, EmpiricalCtrMatchesAnalyticMean) {
  SyntheticSpec s = small_spec(100000);
  s.label_noise = 0.05;
  const SyntheticData d = gen_synthetic(s);
  double clicks = 0.0, expected = 0.0;
  for (std::size_t r = 0; r < d.dataset.size(); ++r) {
    clicks += d.dataset.labels[r];
    expected += d.click_probability[r];
  }
  EXPECT_NEAR(clicks / 1e5, expected / 1e5, 0.02);
}

TEST(Synthetic, UserAttributesFixedPerUser) {
  const SyntheticData d = gen_synthetic(small_spec());
  const std::size_t group0 = SyntheticSpec{}.static_groups[0].size();
  std::map<std::int64_t, std::vector<std::int32_t>> seen;
  for (std::size_t r = 0; r < d.dataset.size(); ++r) {
    std::vector<std::int32_t> attrs;
    for (std::size_t c = 0; c < group0; ++c) attrs.push_back(d.dataset.static_value(r, c));
    auto [it, fresh] = seen.emplace(d.dataset.group_keys[r], attrs);
    if (!fresh) EXPECT_EQ(it->second, attrs);
  }
  EXPECT_EQ(d.feature_groups.size(), 3u);
}

TEST(Synthetic, InvalidSpecRejected) {
  SyntheticSpec s = small_spec();
  s.label_noise = 0.5;
  EXPECT_THROW(gen_synthetic(s), DataError);
}

TEST(Splits, ChronologicalKeepsOrder) {
  const Dataset ds = gen_synthetic(small_spec(100)).dataset;
  const auto [train, valid] = chronological_split(ds, 0.2);
  EXPECT_EQ(train.size(), 80u);
  EXPECT_EQ(valid.size(), 20u);
  EXPECT_EQ(valid.item_ids.front(), ds.item_ids[80]);
  const auto [rt, rv] = random_split(ds, 0.2, 3);
  EXPECT_EQ(rt.size() + rv.size(), 100u);
}

TEST(Cache, RoundTrip) {
  TempDir dir;
  const Dataset ds = gen_synthetic(small_spec(300)).dataset;
  write_dataset_cache(dir / "d.strd", ds);
  const Dataset back = read_dataset_cache(dir / "d.strd");
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.item_ids, ds.item_ids);
  EXPECT_EQ(back.static_values, ds.static_values);
  EXPECT_EQ(back.cardinalities, ds.cardinalities);
  write_text(dir / "junk.strd", "NOPE");
  EXPECT_THROW(read_dataset_cache(dir / "junk.strd"), DataError);
}

TEST(BatchIter, SizesFourFourTwo) {
  const auto b = batch_iter(10, 4, 1, 0);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 4u);
  EXPECT_EQ(b[1].size(), 4u);
  EXPECT_EQ(b[2].size(), 2u);
}

TEST(BatchIter, CoversEveryRowOnce) {
  std::multiset<std::size_t> all;
  for (const auto& batch : batch_iter(1003, 64, 9, 2)) all.insert(batch.begin(), batch.end());
  ASSERT_EQ(all.size(), 1003u);
  std::size_t expect = 0;
  for (std::size_t r : all) EXPECT_EQ(r, expect++);
}

TEST(BatchIter, SeededOrder) {
  EXPECT_EQ(batch_iter(100, 7, 5, 1), batch_iter(100, 7, 5, 1));
  EXPECT_NE(batch_iter(100, 7, 5, 1), batch_iter(100, 7, 5, 2));
  const auto plain = batch_iter(5, 2, 5, 1, false);
  EXPECT_EQ(plain[0], (std::vector<std::size_t>{0, 1}));
}

TEST(Embeddings, TwoItemFile) {
  TempDir dir;
  write_text(dir / "e.csv", "item_id,dim=4\n5,0.5,1,2,3\n9,-1,0,0,0.25\n");
  const EmbeddingTable t = read_embeddings(dir / "e.csv");
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.dim(), 4u);
  EXPECT_EQ(t.row(*t.find(9))[3], 0.25);
}

TEST(Embeddings, DuplicateIdRejected) {
  TempDir dir;
  write_text(dir / "e.csv", "item_id,dim=2\n5,0.5,1\n5,0,0\n");
  EXPECT_THROW(read_embeddings(dir / "e.csv"), DataError);
}

TEST(Embeddings, WriteReadIsExact) {
  TempDir dir;
  EmbeddingTable t(3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  for (std::int64_t id = 0; id < 50; ++id) {
    const std::vector<double> v = {n01(rng), n01(rng) * 1e-9, n01(rng) * 1e7};
    t.add(id * 3 - 20, v);
  }
  write_embeddings(dir / "e.csv", t);
  const EmbeddingTable back = read_embeddings(dir / "e.csv");
  EXPECT_EQ(back.ids(), t.ids());
  EXPECT_EQ(back.values(), t.values());
}

TEST(Embeddings, CooccurrenceIsNormalizedAndDeterministic) {
  const Dataset ds = gen_synthetic(small_spec()).dataset;
  const EmbeddingTable a = cooccurrence_embeddings(ds, 8, 1);
  const EmbeddingTable b = cooccurrence_embeddings(ds, 8, 1);
  EXPECT_EQ(a.values(), b.values());
  for (std::size_t r = 0; r < a.size(); ++r) {
    double n = 0.0;
    for (double v : a.row(r)) n += v * v;
    EXPECT_NEAR(n, 1.0, 1e-9);
  }
}

}  // namespace
}  // namespace store::data
