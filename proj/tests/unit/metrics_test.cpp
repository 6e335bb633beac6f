#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <algorithm>
#include <random>

#include "store/metrics.hpp"

namespace store::metrics {
namespace {

double brute_auc(std::span<const EvalRecord> recs) {
  double wins = 0.0, pairs = 0.0;
  for (const EvalRecord& p : recs) {
    if (p.label != 1) continue;
    for (const EvalRecord& n : recs) {
      if (n.label != 0) continue;
      pairs += 1.0;
      if (p.score > n.score) wins += 1.0;
      else if (p.score == n.score) wins += 0.5;
    }
  }
  return wins / pairs;
}

std::vector<EvalRecord> random_records(std::mt19937_64& rng, std::size_t n, std::size_t groups, int levels) {
  std::uniform_int_distribution<int> label(0, 1), level(0, levels - 1);
  std::uniform_int_distribution<std::int64_t> group(0, static_cast<std::int64_t>(groups) - 1);
  std::uniform_real_distribution<double> u;
  std::vector<EvalRecord> recs(n);
  for (auto& r : recs) r = {label(rng), levels > 0 ? level(rng) / static_cast<double>(levels) : u(rng), group(rng)};
  recs[0].label = 1;
  recs[1].label = 0;
  return recs;
}

TEST(Auc, PerfectOrdering) {
  const std::vector<EvalRecord> r = {{0, 0.1, 0}, {0, 0.2, 0}, {1, 0.8, 0}, {1, 0.9, 0}};
  EXPECT_EQ(auc(r), 1.0);
}

TEST(Auc, AllTiesIsHalf) {
  const std::vector<EvalRecord> r = {{0, 0.3, 0}, {1, 0.3, 0}, {1, 0.3, 0}, {0, 0.3, 0}};
  EXPECT_EQ(auc(r), 0.5);
}

TEST(Auc, SingleClassThrows) {
  const std::vector<EvalRecord> r = {{1, 0.3, 0}, {1, 0.4, 0}};
  EXPECT_THROW(auc(r), std::invalid_argument);
}

TEST(Auc, MatchesPairwiseOracle) {
  std::mt19937_64 rng(1);
  for (int suite = 0; suite < 50; ++suite) {
    const auto recs = random_records(rng, 200, 1, suite % 2 ? 5 : 0);
    EXPECT_EQ(auc(recs), brute_auc(recs));
  }
}

TEST(Gauc, OneGroupEqualsAuc) {
  std::mt19937_64 rng(2);
  const auto recs = random_records(rng, 100, 1, 0);
  EXPECT_EQ(gauc(recs), auc(recs));
}

TEST(Gauc, ImpressionWeighting) {
  std::vector<EvalRecord> r;
  // Group 1: 10 records, perfectly ordered.
  for (int i = 0; i < 10; ++i) r.push_back({i < 5 ? 0 : 1, static_cast<double>(i), 1});
  // Group 2: 30 records, all tied.
  for (int i = 0; i < 30; ++i) r.push_back({i % 2, 0.5, 2});
  // Group 3: one class only, ignored.
  for (int i = 0; i < 7; ++i) r.push_back({1, 0.1, 3});
  EXPECT_DOUBLE_EQ(gauc(r), (10 * 1.0 + 30 * 0.5) / 40.0);
}

TEST(Gauc, MatchesPerGroupOracle) {
  std::mt19937_64 rng(3);
  for (int suite = 0; suite < 20; ++suite) {
    const auto recs = random_records(rng, 300, 6, suite % 3 == 0 ? 3 : 0);
    std::map<std::int64_t, std::vector<EvalRecord>> by;
    for (const auto& r : recs) by[r.group_key].push_back(r);
    double num = 0.0, den = 0.0;
    for (const auto& [k, g] : by) {
      bool pos = false, neg = false;
      for (const auto& r : g) (r.label ? pos : neg) = true;
      if (!(pos && neg)) continue;
      num += static_cast<double>(g.size()) * brute_auc(g);
      den += static_cast<double>(g.size());
    }
    EXPECT_EQ(gauc(recs), num / den);
  }
}

TEST(Logloss, HalfIsLn2) {
  const std::vector<EvalRecord> r = {{0, 0.5, 0}, {1, 0.5, 0}};
  EXPECT_NEAR(logloss(r), std::numbers::ln2, 1e-15);
}

TEST(Logloss, ExactPredictionsAreClipped) {
  const std::vector<EvalRecord> r = {{0, 0.0, 0}, {1, 1.0, 0}};
  const double l = logloss(r);
  EXPECT_GT(l, 0.0);
  EXPECT_NEAR(l, -std::log(1.0 - 1e-7), 1e-12);
}

TEST(Logloss, MatchesFormula) {
  std::mt19937_64 rng(4);
  const auto recs = random_records(rng, 500, 1, 0);
  double expect = 0.0;
  for (const auto& r : recs) {
    const double p = std::clamp(r.score, 1e-7, 1.0 - 1e-7);
    expect -= r.label ? std::log(p) : std::log(1.0 - p);
  }
  EXPECT_NEAR(logloss(recs), expect / 500.0, 1e-12);
}

}  // namespace
}  // namespace store::metrics
