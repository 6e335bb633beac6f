#include <cmath>
#include <random>

#include "store/data.hpp"
#include "store/nn.hpp"

namespace store::data {

void SyntheticSpec::validate() const {
  if (n_items == 0 || n_users == 0 || n_instances == 0 || d_p == 0) throw DataError("synthetic: sizes must be positive");
  if (n_clusters == 0 || n_clusters > n_items) throw DataError("synthetic: need 1 <= n_clusters <= n_items");
  if (!(label_noise >= 0.0 && label_noise < 0.5)) throw DataError("synthetic: label noise must be in [0, 0.5)");
  if (static_groups.empty()) throw DataError("synthetic: at least one static group required");
  for (const auto& g : static_groups) {
    if (g.empty()) throw DataError("synthetic: empty static group");
    for (std::size_t card : g)
      if (card == 0) throw DataError("synthetic: zero cardinality");
  }
}

namespace {

enum Stream : std::uint64_t { kClusters = 1, kItems, kUsers, kEffects, kPairs, kInstances };

std::vector<double> draw(Rng& rng, std::size_t n, double stddev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = stddev * dist(rng);
  return v;
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData out;

  std::vector<std::size_t> cards;
  std::vector<std::size_t> group_of;
  for (std::size_t g = 0; g < spec.static_groups.size(); ++g) {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < spec.static_groups[g].size(); ++j) {
      names.push_back("g" + std::to_string(g) + "_f" + std::to_string(j));
      out.dataset.static_names.push_back(names.back());
      cards.push_back(spec.static_groups[g][j]);
      group_of.push_back(g);
    }
    out.feature_groups.push_back(std::move(names));
  }
  const std::size_t n_static = cards.size();
  for (std::size_t c : cards) out.dataset.cardinalities.push_back(c + 1);  // slot 0 is OOV

  // Items: cluster-structured pretrained embeddings.
  Rng cluster_rng(derive_seed(spec.seed, kClusters));
  std::vector<double> centers = draw(cluster_rng, spec.n_clusters * spec.d_p, spec.cluster_spread);
  Rng item_rng(derive_seed(spec.seed, kItems));
  std::vector<std::size_t> item_cluster(spec.n_items);
  out.embeddings = EmbeddingTable(spec.d_p);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> e(spec.d_p);
  for (std::size_t i = 0; i < spec.n_items; ++i) {
    // Every cluster is populated before clusters repeat.
    item_cluster[i] = i < spec.n_clusters ? i : static_cast<std::size_t>(item_rng() % spec.n_clusters);
    for (std::size_t k = 0; k < spec.d_p; ++k)
      e[k] = centers[item_cluster[i] * spec.d_p + k] + spec.item_noise * unit(item_rng);
    out.embeddings.add(static_cast<std::int64_t>(i + 1), e);
  }

  // Users: fixed values for the group-0 attributes.
  Rng user_rng(derive_seed(spec.seed, kUsers));
  const std::size_t user_feats = spec.static_groups.front().size();
  std::vector<std::int32_t> user_attr(spec.n_users * user_feats);
  for (std::size_t u = 0; u < spec.n_users; ++u)
    for (std::size_t f = 0; f < user_feats; ++f)
      user_attr[u * user_feats + f] = static_cast<std::int32_t>(1 + user_rng() % cards[f]);

  // Planted effects.
  Rng fx(derive_seed(spec.seed, kEffects));
  std::vector<std::vector<double>> main_effect(n_static);
  std::vector<std::vector<double>> cluster_effect(n_static);  // [cluster * (card+1) + v]
  const double per_feature = spec.cluster_scale / std::sqrt(static_cast<double>(n_static));
  for (std::size_t f = 0; f < n_static; ++f) {
    main_effect[f] = draw(fx, cards[f] + 1, spec.main_effect_scale);
    cluster_effect[f] = draw(fx, spec.n_clusters * (cards[f] + 1), per_feature);
  }
  const std::vector<double> cluster_main = draw(fx, spec.n_clusters, spec.cluster_scale);
  const std::vector<double> item_effect = draw(fx, spec.n_items, spec.item_effect_scale);

  struct Pair {
    std::size_t a, b;
    std::vector<double> w;
  };
  std::vector<Pair> pairs;
  Rng pair_rng(derive_seed(spec.seed, kPairs));
  const std::size_t max_pairs = n_static * (n_static - 1) / 2;
  while (pairs.size() < std::min(spec.n_pairs, max_pairs)) {
    std::size_t a = pair_rng() % n_static, b = pair_rng() % n_static;
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    bool dup = false;
    for (const Pair& p : pairs) dup = dup || (p.a == a && p.b == b);
    if (dup) continue;
    pairs.push_back({a, b, draw(pair_rng, (cards[a] + 1) * (cards[b] + 1), spec.pair_scale)});
  }

  // Instances.
  Rng inst(derive_seed(spec.seed, kInstances));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Dataset& ds = out.dataset;
  ds.chronological = false;
  const std::size_t n = spec.n_instances;
  ds.item_ids.resize(n);
  ds.group_keys.resize(n);
  ds.labels.resize(n);
  ds.static_values.resize(n * n_static);
  out.click_probability.resize(n);
  out.planted_score.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t user = inst() % spec.n_users;
    const std::size_t item = inst() % spec.n_items;
    std::int32_t* row = ds.static_values.data() + r * n_static;
    for (std::size_t f = 0; f < n_static; ++f) {
      row[f] = group_of[f] == 0 ? user_attr[user * user_feats + f]
                                : static_cast<std::int32_t>(1 + inst() % cards[f]);
    }
    const std::size_t c = item_cluster[item];
    double score = spec.bias + cluster_main[c] + item_effect[item];
    for (std::size_t f = 0; f < n_static; ++f) {
      score += main_effect[f][row[f]];
      score += cluster_effect[f][c * (cards[f] + 1) + row[f]];
    }
    for (const Pair& p : pairs) score += p.w[row[p.a] * (cards[p.b] + 1) + row[p.b]];
    score *= spec.logit_scale;
    const double prob = score >= 0 ? 1.0 / (1.0 + std::exp(-score)) : std::exp(score) / (1.0 + std::exp(score));
    int label = u01(inst) < prob ? 1 : 0;
    if (u01(inst) < spec.label_noise) label = 1 - label;
    ds.item_ids[r] = static_cast<std::int64_t>(item + 1);
    ds.group_keys[r] = static_cast<std::int64_t>(user + 1);
    ds.labels[r] = static_cast<std::uint8_t>(label);
    out.planted_score[r] = score;
    out.click_probability[r] = (1.0 - spec.label_noise) * prob + spec.label_noise * (1.0 - prob);
  }
  return out;
}

}  // namespace store::data
