#include <cmath>
#include <stdexcept>

#include "store/model.hpp"

namespace store::model {

namespace {

double sigmoid_value(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// Active one-hot indices of a row: one per static column plus the hashed item.
void active(const LogisticModel& m, const data::Dataset& ds, std::size_t row, std::vector<std::size_t>& idx) {
  idx.clear();
  const std::size_t ns = ds.num_static();
  for (std::size_t c = 0; c < ns; ++c) {
    const std::size_t width = m.offsets[c + 1] - m.offsets[c];
    const auto v = ds.static_value(row, c);
    idx.push_back(m.offsets[c] + ((v < 0 || static_cast<std::size_t>(v) >= width) ? 0 : static_cast<std::size_t>(v)));
  }
  idx.push_back(m.offsets[ns] + raw_id_bucket(ds.item_ids[row], m.config.item_buckets));
}

}  // namespace

LogisticModel train_logistic(const data::Dataset& train, const LogisticConfig& config) {
  if (train.size() == 0) throw std::invalid_argument("train_logistic: empty training set");
  if (config.item_buckets == 0 || !(config.lr > 0.0)) throw std::invalid_argument("train_logistic: invalid config");
  LogisticModel m;
  m.config = config;
  m.offsets.push_back(0);
  for (std::size_t card : train.cardinalities) m.offsets.push_back(m.offsets.back() + std::max<std::size_t>(card, 1));
  m.weights.assign(m.offsets.back() + config.item_buckets, 0.0);
  std::vector<double> accum(m.weights.size(), 0.0);
  double bias_accum = 0.0;
  std::vector<std::size_t> idx;
  constexpr double kAdagradEps = 1e-8;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& rows : data::batch_iter(train.size(), 1024, config.seed, epoch)) {
      for (std::size_t r : rows) {
        active(m, train, r, idx);
        double z = m.bias;
        for (std::size_t i : idx) z += m.weights[i];
        const double g = sigmoid_value(z) - static_cast<double>(train.labels[r]);
        for (std::size_t i : idx) {
          const double gi = g + config.l2 * m.weights[i];
          accum[i] += gi * gi;
          m.weights[i] -= config.lr * gi / (std::sqrt(accum[i]) + kAdagradEps);
        }
        bias_accum += g * g;
        m.bias -= config.lr * g / (std::sqrt(bias_accum) + kAdagradEps);
      }
    }
  }
  return m;
}

std::vector<double> predict_logistic(const LogisticModel& m, const data::Dataset& dataset) {
  if (dataset.num_static() + 1 != m.offsets.size()) throw std::invalid_argument("predict_logistic: column count mismatch");
  std::vector<double> out(dataset.size());
  std::vector<std::size_t> idx;
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    active(m, dataset, r, idx);
    double z = m.bias;
    for (std::size_t i : idx) z += m.weights[i];
    out[r] = sigmoid_value(z);
  }
  return out;
}

}  // namespace store::model
