#pragma once

#include <cstdint>
#include <span>

namespace store::metrics {

struct EvalRecord {
  int label = 0;  // 0 or 1
  double score = 0.0;
  std::int64_t group_key = 0;
};

// Probability that a random positive outranks a random negative, ties
// counting one half. O(n log n) by sorting; throws std::invalid_argument when
// only one class is present.
double auc(std::span<const EvalRecord> records);

// Impression-weighted mean of per-group AUC. Groups holding a single class
// are left out of both numerator and denominator; throws when no group has
// both classes. Groups are accumulated in ascending key order.
double gauc(std::span<const EvalRecord> records);

// Mean binary cross-entropy with scores clipped to [1e-7, 1 - 1e-7].
double logloss(std::span<const EvalRecord> records);

struct Summary {
  double auc = 0.0;
  double gauc = 0.0;
  double logloss = 0.0;
};

Summary evaluate(std::span<const EvalRecord> records);

}  // namespace store::metrics
