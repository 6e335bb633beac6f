#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "store/data.hpp"
#include "store/rotation.hpp"

namespace store::rotation {
namespace {

using testing::max_rel_error;
using testing::weighted_sum;

Mlp identity_mlp(std::size_t n) {
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  Mlp m;
  m.act = Activation::kIdentity;
  m.hidden = {Tensor::from_values({n, n}, eye, true), Tensor::zeros({n}, true)};
  m.output = {Tensor::from_values({n, n}, eye, true), Tensor::zeros({n}, true)};
  return m;
}

double pairwise_spread(const RotationBank& bank) {
  double total = 0.0;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    for (std::size_t j = i + 1; j < bank.size(); ++j) {
      for (std::size_t e = 0; e < bank.matrices[i].numel(); ++e) {
        const double d = bank.matrices[i][e] - bank.matrices[j][e];
        total += d * d;
      }
    }
  }
  return total;
}

double frobenius_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

TEST(FuseGroups, IdentityMlpPassesThrough) {
  const std::vector<Tensor> in = {Tensor::from_values({1, 2}, {0.5, -0.5})};
  const std::vector<Mlp> mlps = {identity_mlp(2)};
  const Tensor c = fuse_groups(in, mlps);
  EXPECT_EQ(c.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(c[0], 0.5);
  EXPECT_DOUBLE_EQ(c[1], -0.5);
}

TEST(FuseGroups, OutputsAreLocalToTheirGroup) {
  Rng rng(1);
  const std::vector<Mlp> mlps = {make_mlp(3, 4, 2, Activation::kTanh, rng), make_mlp(5, 4, 2, Activation::kTanh, rng)};
  const Tensor g1 = randn({4, 3}, rng, 1.0);
  std::vector<Tensor> in = {g1, randn({4, 5}, rng, 1.0)};
  const Tensor before = fuse_groups(in, mlps);
  EXPECT_EQ(before.shape(), (Shape{4, 4}));
  in[1] = randn({4, 5}, rng, 1.0);
  const Tensor after = fuse_groups(in, mlps);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(before[r * 4 + 0], after[r * 4 + 0]);
    EXPECT_EQ(before[r * 4 + 1], after[r * 4 + 1]);
    EXPECT_NE(before[r * 4 + 2], after[r * 4 + 2]);
  }
}

TEST(FuseGroups, CountMismatchThrows) {
  Rng rng(2);
  const std::vector<Mlp> mlps = {make_mlp(2, 2, 2, Activation::kTanh, rng)};
  const std::vector<Tensor> in = {Tensor::zeros({1, 2}), Tensor::zeros({1, 2})};
  EXPECT_THROW(fuse_groups(in, mlps), std::invalid_argument);
}

TEST(FuseGroups, Gradient) {
  Rng rng(3);
  const std::vector<Mlp> mlps = {make_mlp(3, 4, 2, Activation::kTanh, rng), make_mlp(2, 4, 2, Activation::kTanh, rng)};
  const std::vector<Tensor> in = {randn({3, 3}, rng, 1.0, true), randn({3, 2}, rng, 1.0, true)};
  std::vector<Tensor> params = in;
  for (const Mlp& m : mlps) m.collect(params);
  EXPECT_LT(max_rel_error([&] { return weighted_sum(fuse_groups(in, mlps)); }, params), 1e-4);
}

TEST(GroupFusion, PerturbingGroupTwoFeatureLeavesGroupOneUnchanged) {
  data::SyntheticSpec spec;
  spec.n_instances = 50;
  spec.n_items = 20;
  spec.n_clusters = 4;
  data::Dataset ds = data::gen_synthetic(spec).dataset;
  GroupConfig cfg;
  cfg.groups = {{"a", {ds.static_names[0], ds.static_names[1]}}, {"b", {}}};
  for (std::size_t i = 2; i < ds.num_static(); ++i) cfg.groups[1].features.push_back(ds.static_names[i]);
  cfg.validate(ds.static_names);
  Rng rng(4);
  const GroupFusion fusion = make_group_fusion(cfg, ds.static_names, ds.cardinalities, rng);
  std::vector<std::size_t> rows(ds.size());
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r;
  const Tensor before = fusion.forward(ds, rows);
  ASSERT_EQ(before.shape(), (Shape{ds.size(), 8}));
  for (std::size_t r = 0; r < ds.size(); ++r) {
    auto& v = ds.static_values[r * ds.num_static() + 2];
    v = (v + 1) % static_cast<std::int32_t>(ds.cardinalities[2]);
  }
  const Tensor after = fusion.forward(ds, rows);
  bool group_two_moved = false;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(before[r * 8 + c], after[r * 8 + c]);
    for (std::size_t c = 4; c < 8; ++c) group_two_moved |= before[r * 8 + c] != after[r * 8 + c];
  }
  EXPECT_TRUE(group_two_moved);
}

TEST(GroupConfig, Validation) {
  const std::vector<std::string> names = {"x", "y", "z"};
  GroupConfig ok;
  ok.groups = {{"g1", {"x", "z"}}, {"g2", {"y"}}};
  EXPECT_NO_THROW(ok.validate(names));
  GroupConfig missing;
  missing.groups = {{"g1", {"x"}}};
  EXPECT_THROW(missing.validate(names), std::invalid_argument);
  GroupConfig dup;
  dup.groups = {{"g1", {"x", "y"}}, {"g2", {"y", "z"}}};
  EXPECT_THROW(dup.validate(names), std::invalid_argument);
  GroupConfig unknown;
  unknown.groups = {{"g1", {"x", "y", "z", "w"}}};
  EXPECT_THROW(unknown.validate(names), std::invalid_argument);
  EXPECT_EQ(singleton_groups(names).groups.size(), 3u);
}

TEST(Rotate, IdentityKeepsBlock) {
  RotationBank bank;
  bank.matrices = {Tensor::eye(3)};
  const Tensor c = Tensor::from_values({2, 3}, {1, 2, 3, -4, 5, 6});
  const Tensor o = rotate(c, bank, 0);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(o[i], c[i]);
  EXPECT_THROW(rotate(c, bank, 1), std::out_of_range);
}

TEST(Rotate, QuarterTurn) {
  RotationBank bank;
  bank.matrices = {Tensor::from_values({2, 2}, {0, 1, -1, 0})};
  const Tensor o = rotate(Tensor::from_values({1, 2}, {1, 0}), bank, 0);
  EXPECT_DOUBLE_EQ(o[0], 0.0);
  EXPECT_DOUBLE_EQ(o[1], 1.0);
}

TEST(Rotate, PreservesNorms) {
  const RotationBank bank = make_rotation_bank(3, 6, 0.1, 5);
  Rng rng(6);
  const Tensor c = randn({10, 6}, rng, 2.0);
  EXPECT_LT(norm_drift(c, bank), 1e-6);
}

TEST(Rotate, Gradient) {
  RotationBank bank = make_rotation_bank(2, 4, 0.1, 7);
  for (Tensor& m : bank.matrices) m = m.detach(true);
  Rng rng(8);
  const Tensor c = randn({3, 4}, rng, 1.0, true);
  const std::vector<Tensor> params = {c, bank.matrices[0], bank.matrices[1]};
  EXPECT_LT(max_rel_error([&] { return weighted_sum(add(rotate(c, bank, 0), rotate(c, bank, 1))); }, params), 1e-4);
}

TEST(Diversity, SingleMatrixIsZero) {
  EXPECT_EQ(diversity_penalty(make_rotation_bank(1, 3, 0.1, 1)).item(), 0.0);
}

TEST(Diversity, CollapsedPairIsZero) {
  RotationBank bank = make_rotation_bank(1, 3, 0.1, 1);
  bank.matrices.push_back(bank.matrices[0].detach(true));
  EXPECT_EQ(diversity_penalty(bank).item(), 0.0);
}

TEST(Diversity, ReflectionExample) {
  RotationBank bank;
  bank.lambda = 0.1;
  bank.matrices = {Tensor::from_values({2, 2}, {1, 0, 0, 1}, true), Tensor::from_values({2, 2}, {1, 0, 0, -1}, true)};
  EXPECT_NEAR(diversity_penalty(bank).item(), -0.4, 1e-15);
}

TEST(Diversity, Gradient) {
  RotationBank bank = make_rotation_bank(3, 3, 0.1, 9);
  EXPECT_LT(max_rel_error([&] { return diversity_penalty(bank); }, bank.matrices), 1e-4);
}

TEST(ProjectOrthogonal, ScaledIdentity) {
  const Tensor r = project_orthogonal(Tensor::from_values({2, 2}, {2, 0, 0, 2}));
  EXPECT_NEAR(r[0], 1.0, 1e-12);
  EXPECT_NEAR(r[1], 0.0, 1e-12);
  EXPECT_NEAR(r[2], 0.0, 1e-12);
  EXPECT_NEAR(r[3], 1.0, 1e-12);
}

TEST(ProjectOrthogonal, OrthogonalIsFixedPoint) {
  const Tensor q = random_orthogonal(5, 10);
  const Tensor r = project_orthogonal(q);
  EXPECT_LT(testing::max_abs_diff(q.values(), r.values()), 1e-6);
}

TEST(ProjectOrthogonal, NearestAmongRandomCandidates) {
  Rng rng(11);
  Tensor m = randn({8, 8}, rng, 1.0);
  {
    // Keep it well conditioned.
    auto v = m.mutable_values();
    for (std::size_t i = 0; i < 8; ++i) v[i * 8 + i] += 4.0;
  }
  const Tensor r = project_orthogonal(m);
  EXPECT_LT(orthogonality_error(r), 1e-6);
  const double best = frobenius_distance(m.values(), r.values());
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Tensor cand = random_orthogonal(8, 1000 + s);
    EXPECT_LE(best, frobenius_distance(m.values(), cand.values()));
  }
}

TEST(ProjectOrthogonal, RankDeficientThrows) {
  EXPECT_THROW(project_orthogonal(Tensor::from_values({2, 2}, {1, 2, 2, 4})), std::runtime_error);
}

TEST(RandomOrthogonal, OneByOne) {
  const Tensor r = random_orthogonal(1, 3);
  EXPECT_EQ(std::abs(r[0]), 1.0);
}

TEST(RandomOrthogonal, Dim32IsOrthogonal) {
  const Tensor r = random_orthogonal(32, 4);
  EXPECT_LT(orthogonality_error(r), 1e-6);
  EXPECT_NEAR(std::abs(determinant(r)), 1.0, 1e-4);
}

TEST(RandomOrthogonal, SameSeedSameMatrix) {
  const Tensor a = random_orthogonal(6, 12), b = random_orthogonal(6, 12), c = random_orthogonal(6, 13);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_GT(testing::max_abs_diff(a.values(), c.values()), 1e-3);
}

TEST(RotationStep, ZeroGradientKeepsBank) {
  RotationBank bank = make_rotation_bank(2, 4, 0.1, 14);
  const std::vector<double> before(bank.matrices[1].values().begin(), bank.matrices[1].values().end());
  const std::vector<Tensor> zeros = {Tensor::zeros({4, 4}), Tensor::zeros({4, 4})};
  rotation_step(bank, zeros, 0.1);
  EXPECT_LT(testing::max_abs_diff(before, bank.matrices[1].values()), 1e-12);
}

TEST(RotationStep, StaysOrthogonalAndKeepsHandles) {
  RotationBank bank = make_rotation_bank(3, 5, 0.1, 15);
  const Tensor handle = bank.matrices[0];
  Rng rng(16);
  for (int step = 0; step < 20; ++step) {
    std::vector<Tensor> g;
    for (std::size_t i = 0; i < 3; ++i) g.push_back(randn({5, 5}, rng, 1.0));
    rotation_step(bank, g, 0.3);
    for (const Tensor& r : bank.matrices) {
      EXPECT_LT(orthogonality_error(r), 1e-6);
      EXPECT_NEAR(std::abs(determinant(r)), 1.0, 1e-4);
    }
  }
  EXPECT_EQ(handle.node(), bank.matrices[0].node());
}

TEST(RotationStep, DiversityAloneSpreadsMatrices) {
  RotationBank bank = make_rotation_bank(3, 3, 0.1, 17);
  double prev = pairwise_spread(bank);
  for (int step = 0; step < 50; ++step) {
    const auto g = grad(diversity_penalty(bank), bank.matrices);
    rotation_step(bank, g, 0.05);
    const double now = pairwise_spread(bank);
    EXPECT_GE(now, prev - 1e-12) << "step " << step;
    prev = now;
  }
}

}  // namespace
}  // namespace store::rotation
