#include <cmath>
#include <map>
#include <stdexcept>

#include <Eigen/Dense>

#include "store/rotation.hpp"

namespace store::rotation {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix to_matrix(const Tensor& t) {
  if (t.rank() != 2 || t.dim(0) != t.dim(1)) throw std::invalid_argument("expected a square matrix, got " + shape_str(t.shape()));
  Matrix m(t.dim(0), t.dim(1));
  std::copy(t.values().begin(), t.values().end(), m.data());
  return m;
}

std::vector<double> flatten(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

Matrix polar(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv.minCoeff() < 1e-8) {
    throw std::runtime_error("project_orthogonal: matrix is rank deficient (smallest singular value " +
                             std::to_string(sv.size() ? sv.minCoeff() : 0.0) + ")");
  }
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace

void GroupConfig::validate(std::span<const std::string> static_names) const {
  if (groups.empty()) throw std::invalid_argument("group config: at least one group required");
  if (embed_dim == 0 || fused_dim == 0) throw std::invalid_argument("group config: dims must be positive");
  std::map<std::string, std::string> owner;
  for (const FeatureGroup& g : groups) {
    if (g.features.empty()) throw std::invalid_argument("group config: group '" + g.name + "' is empty");
    for (const std::string& f : g.features) {
      if (std::find(static_names.begin(), static_names.end(), f) == static_names.end()) {
        throw std::invalid_argument("group config: group '" + g.name + "' names unknown feature '" + f + "'");
      }
      auto [it, fresh] = owner.emplace(f, g.name);
      if (!fresh) throw std::invalid_argument("group config: feature '" + f + "' is in groups '" + it->second + "' and '" + g.name + "'");
    }
  }
  for (const std::string& f : static_names)
    if (!owner.count(f)) throw std::invalid_argument("group config: feature '" + f + "' is in no group");
}

GroupConfig singleton_groups(std::span<const std::string> static_names, std::size_t embed_dim, std::size_t fused_dim) {
  GroupConfig cfg;
  cfg.embed_dim = embed_dim;
  cfg.fused_dim = fused_dim;
  for (const std::string& f : static_names) cfg.groups.push_back({f, {f}});
  return cfg;
}

Tensor fuse_groups(std::span<const Tensor> group_inputs, std::span<const Mlp> mlps) {
  if (group_inputs.empty()) throw std::invalid_argument("fuse_groups: no groups");
  if (group_inputs.size() != mlps.size()) {
    throw std::invalid_argument("fuse_groups: " + std::to_string(group_inputs.size()) + " group inputs for " +
                                std::to_string(mlps.size()) + " fusion MLPs");
  }
  std::vector<Tensor> parts;
  parts.reserve(mlps.size());
  for (std::size_t k = 0; k < mlps.size(); ++k) {
    if (!group_inputs[k].defined()) throw std::invalid_argument("fuse_groups: group " + std::to_string(k) + " has no features");
    parts.push_back(mlps[k].forward(group_inputs[k]));
  }
  return parts.size() == 1 ? parts.front() : concat(parts);
}

std::vector<Tensor> GroupFusion::group_inputs(const data::Dataset& dataset, std::span<const std::size_t> rows) const {
  std::vector<Tensor> out;
  std::vector<std::size_t> idx(rows.size());
  for (std::size_t g = 0; g < columns.size(); ++g) {
    std::vector<Tensor> feats;
    for (std::size_t f = 0; f < columns[g].size(); ++f) {
      const std::size_t col = columns[g][f];
      if (col >= dataset.num_static()) throw std::out_of_range("group fusion: dataset lacks static column " + std::to_string(col));
      const std::size_t card = tables[g][f].dim(0);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto v = dataset.static_value(rows[r], col);
        // values beyond the table fall back to the OOV slot
        idx[r] = (v < 0 || static_cast<std::size_t>(v) >= card) ? 0 : static_cast<std::size_t>(v);
      }
      feats.push_back(gather_rows(tables[g][f], idx));
    }
    out.push_back(feats.size() == 1 ? feats.front() : concat(feats));
  }
  return out;
}

Tensor GroupFusion::forward(const data::Dataset& dataset, std::span<const std::size_t> rows) const {
  return fuse_groups(group_inputs(dataset, rows), mlps);
}

void GroupFusion::collect(std::vector<Tensor>& params) const {
  for (const auto& group : tables) params.insert(params.end(), group.begin(), group.end());
  for (const Mlp& m : mlps) m.collect(params);
}

GroupFusion make_group_fusion(const GroupConfig& config, std::span<const std::string> static_names,
                              std::span<const std::size_t> cardinalities, Rng& rng) {
  config.validate(static_names);
  if (cardinalities.size() != static_names.size()) throw std::invalid_argument("group fusion: cardinality count mismatch");
  GroupFusion gf;
  gf.config = config;
  for (const FeatureGroup& g : config.groups) {
    std::vector<std::size_t> cols;
    std::vector<Tensor> tabs;
    for (const std::string& f : g.features) {
      const std::size_t col = static_cast<std::size_t>(std::find(static_names.begin(), static_names.end(), f) - static_names.begin());
      cols.push_back(col);
      tabs.push_back(randn({std::max<std::size_t>(cardinalities[col], 1), config.embed_dim}, rng, 0.1, true));
    }
    const std::size_t in = g.features.size() * config.embed_dim;
    gf.mlps.push_back(make_mlp(in, 2 * config.fused_dim, config.fused_dim, Activation::kTanh, rng));
    gf.columns.push_back(std::move(cols));
    gf.tables.push_back(std::move(tabs));
  }
  return gf;
}

RotationBank make_rotation_bank(std::size_t k, std::size_t dim, double lambda, std::uint64_t seed) {
  if (k == 0 || dim == 0) throw std::invalid_argument("rotation bank: K and dim must be positive");
  RotationBank bank;
  bank.lambda = lambda;
  for (std::size_t i = 0; i < k; ++i) bank.matrices.push_back(random_orthogonal(dim, derive_seed(seed, i)).detach(true));
  return bank;
}

Tensor rotate(const Tensor& c, const RotationBank& bank, std::size_t i) {
  if (i >= bank.size()) {
    throw std::out_of_range("rotate: index " + std::to_string(i) + " outside bank of " + std::to_string(bank.size()));
  }
  return matmul(c, bank.matrices[i]);
}

Tensor diversity_penalty(const RotationBank& bank) {
  Tensor total;
  for (std::size_t i = 0; i < bank.size(); ++i)
    for (std::size_t j = i + 1; j < bank.size(); ++j) {
      const Tensor d = sum(square(sub(bank.matrices[i], bank.matrices[j])));
      total = total.defined() ? add(total, d) : d;
    }
  if (!total.defined()) return Tensor::scalar(0.0);
  return scale(total, -bank.lambda);
}

Tensor project_orthogonal(const Tensor& m) {
  const Matrix r = polar(to_matrix(m));
  return Tensor::from_values({static_cast<std::size_t>(r.rows()), static_cast<std::size_t>(r.cols())}, flatten(r));
}

Tensor random_orthogonal(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("random_orthogonal: dim must be positive");
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Matrix g(dim, dim);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = unit(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Sign fix makes the distribution uniform over the group.
  for (std::size_t j = 0; j < dim; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return Tensor::from_values({dim, dim}, flatten(q));
}

void rotation_step(RotationBank& bank, std::span<const Tensor> grads, double lr) {
  if (grads.size() != bank.size()) throw std::invalid_argument("rotation_step: gradient count mismatch");
  for (std::size_t i = 0; i < bank.size(); ++i) {
    Tensor& r = bank.matrices[i];
    if (grads[i].shape() != r.shape()) throw std::invalid_argument("rotation_step: gradient shape mismatch");
    Matrix m = to_matrix(r);
    const Matrix g = to_matrix(grads[i]);
    m -= lr * g;
    const Matrix p = polar(m);
    std::copy(p.data(), p.data() + p.size(), r.mutable_values().begin());
  }
}

double orthogonality_error(const Tensor& r) {
  const Matrix m = to_matrix(r);
  return (m.transpose() * m - Matrix::Identity(m.rows(), m.cols())).norm();
}

double determinant(const Tensor& r) { return to_matrix(r).determinant(); }

double norm_drift(const Tensor& c, const RotationBank& bank) {
  if (c.rank() != 2 || c.dim(1) != bank.dim()) throw std::invalid_argument("norm_drift: block/rotation dim mismatch");
  const std::size_t n = c.dim(0), d = c.dim(1);
  const auto cv = c.values();
  double worst = 0.0;
  for (const Tensor& r : bank.matrices) {
    const auto rv = r.values();
    std::vector<double> o(d);
    for (std::size_t row = 0; row < n; ++row) {
      std::fill(o.begin(), o.end(), 0.0);
      double in = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double x = cv[row * d + k];
        in += x * x;
        for (std::size_t j = 0; j < d; ++j) o[j] += x * rv[k * d + j];
      }
      double out = 0.0;
      for (double v : o) out += v * v;
      worst = std::max(worst, std::abs(std::sqrt(out) - std::sqrt(in)));
    }
  }
  return worst;
}

}  // namespace store::rotation
