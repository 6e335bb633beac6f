#include "store/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace store::metrics {

namespace {

constexpr double kClip = 1e-7;

void validate(std::span<const EvalRecord> records) {
  for (const EvalRecord& r : records) {
    if (r.label != 0 && r.label != 1) throw std::invalid_argument("metrics: label outside {0, 1}");
    if (!std::isfinite(r.score)) throw std::invalid_argument("metrics: non-finite score");
  }
}

struct PairCounts {
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;
  std::uint64_t wins = 0;  // positive scored strictly above negative
  std::uint64_t ties = 0;
};

PairCounts count_pairs(std::span<const EvalRecord> records, std::vector<std::size_t> order) {
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return records[a].score < records[b].score; });
  PairCounts c;
  std::uint64_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < order.size() && records[order[j]].score == records[order[i]].score) {
      (records[order[j]].label == 1 ? pos : neg) += 1;
      ++j;
    }
    c.wins += pos * neg_below;
    c.ties += pos * neg;
    neg_below += neg;
    c.positives += pos;
    c.negatives += neg;
    i = j;
  }
  return c;
}

double ratio(const PairCounts& c) {
  return (static_cast<double>(c.wins) + 0.5 * static_cast<double>(c.ties)) /
         (static_cast<double>(c.positives) * static_cast<double>(c.negatives));
}

}  // namespace

double auc(std::span<const EvalRecord> records) {
  validate(records);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  const PairCounts c = count_pairs(records, std::move(order));
  if (c.positives == 0 || c.negatives == 0) throw std::invalid_argument("auc: needs both classes");
  return ratio(c);
}

double gauc(std::span<const EvalRecord> records) {
  validate(records);
  std::map<std::int64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].group_key].push_back(i);
  double weighted = 0.0;
  double weight = 0.0;
  for (auto& [key, members] : groups) {
    const double n = static_cast<double>(members.size());
    const PairCounts c = count_pairs(records, std::move(members));
    if (c.positives == 0 || c.negatives == 0) continue;
    weighted += n * ratio(c);
    weight += n;
  }
  if (weight == 0.0) throw std::invalid_argument("gauc: no group contains both classes");
  return weighted / weight;
}

double logloss(std::span<const EvalRecord> records) {
  validate(records);
  if (records.empty()) throw std::invalid_argument("logloss: no records");
  double acc = 0.0;
  for (const EvalRecord& r : records) {
    const double p = std::clamp(r.score, kClip, 1.0 - kClip);
    acc -= r.label == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return acc / static_cast<double>(records.size());
}

Summary evaluate(std::span<const EvalRecord> records) {
  return {auc(records), gauc(records), logloss(records)};
}

}  // namespace store::metrics
