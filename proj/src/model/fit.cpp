#include <stdexcept>

#include "store/model.hpp"

namespace store::model {

std::vector<double> predict(const StoreModel& model, const data::Dataset& dataset, const tokenizer::SidTable* sids) {
  std::vector<double> out;
  out.reserve(dataset.size());
  for (const auto& rows : data::batch_iter(dataset.size(), model.config.eval_batch_size, 0, 0, false)) {
    const Batch b = make_batch(model, dataset, rows, sids);
    const Tensor p = forward(model, dataset, b).probs;
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return out;
}

metrics::Summary evaluate(const StoreModel& model, const data::Dataset& dataset, const tokenizer::SidTable* sids) {
  const std::vector<double> scores = predict(model, dataset, sids);
  std::vector<metrics::EvalRecord> records(dataset.size());
  for (std::size_t r = 0; r < dataset.size(); ++r) records[r] = {dataset.labels[r], scores[r], dataset.group_keys[r]};
  return metrics::evaluate(records);
}

FitResult fit(const data::Dataset& train, const data::Dataset& valid, const StoreConfig& config,
              const tokenizer::SidTable* sids, const EpochCallback& on_epoch) {
  config.validate();
  if (!config.raw_id && !sids) throw std::invalid_argument("fit: a SID table is required unless raw_id is set");
  if (train.size() == 0) throw std::invalid_argument("fit: empty training set");
  FitResult result;
  result.model = init_store(config, train);
  StoreModel& model = result.model;
  const std::vector<Tensor> net = model.network_parameters();
  std::vector<Tensor> all = net;
  all.insert(all.end(), model.rotations.matrices.begin(), model.rotations.matrices.end());
  std::vector<Tensor> net_mut = net;
  OptimizerState opt(config.optimizer);
  const double flops = model_flops(model, config.batch_size);
  const bool rotating = config.rotation && model.rotations.size() > 0;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch + 1;
    log.flops_per_batch = flops;
    double seen = 0.0;
    for (const auto& rows : data::batch_iter(train.size(), config.batch_size, config.seed, epoch)) {
      const Batch batch = make_batch(model, train, rows, sids);
      std::vector<Tensor> grads;
      LossParts parts;
      ForwardOutput fwd;
      try {
        fwd = forward(model, train, batch);
        parts = total_loss(model, fwd.probs, batch.labels);
        grads = grad(parts.total, all);
      } catch (const std::domain_error& e) {
        throw std::runtime_error("fit: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                 std::to_string(step + 1) + " (" + e.what() + ")");
      }
      if (rotating) log.max_norm_drift = std::max(log.max_norm_drift, rotation::norm_drift(fwd.block, model.rotations));

      optimizer_step(opt, net_mut, std::span<const Tensor>(grads.data(), net.size()));
      ++step;
      if (rotating && step % config.rotation_interval == 0) {
        rotation::rotation_step(model.rotations, std::span<const Tensor>(grads.data() + net.size(), model.rotations.size()),
                                config.rotation_lr);
        for (const Tensor& r : model.rotations.matrices) {
          const double err = rotation::orthogonality_error(r);
          log.max_orth_error = std::max(log.max_orth_error, err);
          if (err >= 1e-6) {
            throw std::runtime_error("fit: rotation left the orthogonal group (error " + std::to_string(err) + ")");
          }
        }
      }
      const double bce = parts.bce.item();
      result.step_losses.push_back(bce);
      log.train_loss += bce * static_cast<double>(rows.size());
      seen += static_cast<double>(rows.size());
      ++log.steps;
    }
    log.train_loss /= seen;
    if (valid.size() > 0) {
      const metrics::Summary s = evaluate(model, valid, sids);
      log.val_auc = s.auc;
      log.val_gauc = s.gauc;
      log.val_logloss = s.logloss;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace store::model
