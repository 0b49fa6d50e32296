#include <gtest/gtest.h>

#include <cmath>

#include "ista/oracle.hpp"
#include "ista/sta_encoder.hpp"
#include "test_support.hpp"

namespace {

using namespace ista;

Codebook single_word(int d) { return Codebook(RowMatrix::Ones(1, d)); }

Matrix outer(std::span<const float> a, std::span<const float> b) {
  Matrix m(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = double{a[i]} * b[j];
    }
  }
  return m;
}

// Pair sums by a double loop over all position pairs within Chebyshev radius.
PairStatistics brute_force_stats(const std::vector<DescriptorGrid>& grids, const Codebook& cb,
                                 int radius) {
  PairStatistics s = PairStatistics::zeros(cb.size(), cb.dim());
  for (const auto& g : grids) {
    const int h = static_cast<int>(g.height()), w = static_cast<int>(g.width());
    for (int a = 0; a < h * w; ++a) {
      for (int b = 0; b < h * w; ++b) {
        if (a == b || std::abs(a / w - b / w) > radius || std::abs(a % w - b % w) > radius) continue;
        const auto xa = g.descriptor(static_cast<std::size_t>(a));
        const auto xb = g.descriptor(static_cast<std::size_t>(b));
        s.add_block(s.pair_index(cb.assign(xa), cb.assign(xb)), outer(xa, xb), 1);
      }
    }
  }
  return s;
}

void expect_stats_near(const PairStatistics& a, const PairStatistics& b, double tol) {
  ASSERT_EQ(a.pairs(), b.pairs());
  for (std::size_t p = 0; p < a.pairs(); ++p) {
    EXPECT_EQ(a.counts[p], b.counts[p]) << "pair " << p;
    EXPECT_LT((a.sum(p) - b.sum(p)).cwiseAbs().maxCoeff(), tol) << "pair " << p;
  }
}

TEST(PairStats, TwoCellGridSameCluster) {
  const DescriptorGrid g("g", 0, 1, 2, 2, {0.6f, 0.8f, 1.0f, 0.0f});
  const auto s = accumulate_pair_stats(std::vector{g}, single_word(2), 1);
  EXPECT_EQ(s.counts[0], 2u);
  const Matrix want = outer(g.descriptor(0), g.descriptor(1)) + outer(g.descriptor(1), g.descriptor(0));
  EXPECT_LT((s.sum(0) - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PairStats, SingleCellHasNoPairs) {
  const DescriptorGrid g("g", 0, 1, 1, 3, {1.0f, 0.0f, 0.0f});
  Rng rng(1);
  const auto s = accumulate_pair_stats(std::vector{g}, oracle::random_codebook(rng, 3, 3), 1);
  for (auto c : s.counts) EXPECT_EQ(c, 0u);
}

TEST(PairStats, MatchesBruteForceEnumeration) {
  Rng rng(2);
  const Codebook cb = oracle::random_codebook(rng, 3, 4);
  std::vector<DescriptorGrid> grids;
  for (int i = 0; i < 3; ++i) grids.push_back(oracle::random_grid(rng, 4, 4, 4));
  for (int radius : {1, 2}) {
    expect_stats_near(accumulate_pair_stats(grids, cb, radius), brute_force_stats(grids, cb, radius),
                      1e-12);
  }
}

TEST(PairStats, AdditiveOverConcatenationAndThreadInvariant) {
  Rng rng(3);
  const Codebook cb = oracle::random_codebook(rng, 4, 5);
  std::vector<DescriptorGrid> all;
  for (int i = 0; i < 21; ++i) all.push_back(oracle::random_grid(rng, 5, 3, 5));
  PairStatistics summed = PairStatistics::zeros(4, 5);
  for (const auto& g : all) summed.merge(accumulate_pair_stats(std::vector{g}, cb, 1));
  const auto one = accumulate_pair_stats(all, cb, 1, 1);
  expect_stats_near(one, summed, 1e-12);
  const auto four = accumulate_pair_stats(all, cb, 1, 4);
  for (std::size_t p = 0; p < one.pairs(); ++p) EXPECT_EQ(one.sum(p), four.sum(p));
}

TEST(PairStats, RejectsDepthMismatch) {
  Rng rng(4);
  EXPECT_THROW(accumulate_pair_stats(std::vector{oracle::random_grid(rng, 2, 2, 3)},
                                     oracle::random_codebook(rng, 2, 4), 1),
               ArgumentError);
}

TEST(PairStatsFile, RoundTrip) {
  test::TempDir dir;
  Rng rng(5);
  const Codebook cb = oracle::random_codebook(rng, 3, 2);
  const auto s = accumulate_pair_stats(std::vector{oracle::random_grid(rng, 3, 3, 2)}, cb, 1);
  save_pair_stats(s, dir / "m.pairstats");
  const auto back = load_pair_stats(dir / "m.pairstats");
  EXPECT_EQ(back.counts, s.counts);
  for (std::size_t p = 0; p < s.pairs(); ++p) EXPECT_EQ(back.sum(p), s.sum(p));
}

TEST(RankForEnergy, Arithmetic) {
  EXPECT_EQ(rank_for_energy(Vector::Constant(1, 2.0), 0.8), 1);
  Vector s(2);
  s << 3.0, 1.0;
  EXPECT_EQ(rank_for_energy(s, 0.9), 1);  // 9/10 reaches 0.9
  EXPECT_EQ(rank_for_energy(s, 0.91), 2);
  EXPECT_EQ(rank_for_energy(Vector::Zero(3), 0.5), 0);
}

TEST(PairBasis, RankOneMatrix) {
  Matrix t = Matrix::Zero(2, 2);
  t(0, 0) = 2.0;
  const PairFactors f = factor_mean_tensor(t, 10, 0.8);
  ASSERT_EQ(f.rank(), 1);
  EXPECT_DOUBLE_EQ(f.singular_values(0), 2.0);
  EXPECT_LT((f.u.col(0) - Vector::Unit(2, 0)).norm(), 1e-15);
  EXPECT_LT((f.v.col(0) - Vector::Unit(2, 0)).norm(), 1e-15);
}

TEST(PairBasis, FullTargetReconstructs) {
  Rng rng(6);
  const Matrix t = test::random_matrix(rng, 8, 8);
  const PairFactors f = factor_mean_tensor(t, 10, 1.0);
  EXPECT_EQ(f.rank(), 8);
  EXPECT_LE((f.u * f.singular_values.asDiagonal() * f.v.transpose() - t).norm(), 1e-9);
  EXPECT_LT((f.u.transpose() * f.u - Matrix::Identity(8, 8)).norm(), 1e-12);
}

TEST(PairBasis, MinPairCountAndTargetRange) {
  PairStatistics s = PairStatistics::zeros(1, 2);
  s.add_block(0, Matrix::Identity(2, 2) * 5.0, 5);
  EXPECT_EQ(compute_pair_basis(s, {0.8, 6, 1}).pairs[0].rank(), 0);
  EXPECT_EQ(compute_pair_basis(s, {1.0, 5, 1}).pairs[0].rank(), 2);
  EXPECT_THROW(compute_pair_basis(s, {0.0, 1, 1}), ArgumentError);
  EXPECT_THROW(compute_pair_basis(s, {1.5, 1, 1}), ArgumentError);
}

TEST(PairModelFile, RoundTripIsBitExact) {
  test::TempDir dir;
  Rng rng(7);
  const Codebook cb = oracle::random_codebook(rng, 2, 3);
  std::vector<DescriptorGrid> grids;
  for (int i = 0; i < 4; ++i) grids.push_back(oracle::random_grid(rng, 4, 4, 3));
  const PairBasis b = compute_pair_basis(accumulate_pair_stats(grids, cb, 1), {0.9, 1, 1});
  save_pair_model(b, dir / "m.pairmodel");
  const PairBasis back = load_pair_model(dir / "m.pairmodel");
  ASSERT_EQ(back.pairs.size(), b.pairs.size());
  for (std::size_t p = 0; p < b.pairs.size(); ++p) {
    EXPECT_EQ(back.pairs[p].pair_count, b.pairs[p].pair_count);
    EXPECT_EQ(back.pairs[p].singular_values, b.pairs[p].singular_values);
    EXPECT_EQ(back.pairs[p].u, b.pairs[p].u);
    EXPECT_EQ(back.pairs[p].v, b.pairs[p].v);
  }
}

PairBasis basis_from(const Codebook& cb, Rng& rng, double target) {
  std::vector<DescriptorGrid> train;
  for (int i = 0; i < 10; ++i) train.push_back(oracle::random_grid(rng, 6, 6, static_cast<std::uint32_t>(cb.dim())));
  return compute_pair_basis(accumulate_pair_stats(train, cb, 1), {target, 1, 1});
}

TEST(Encode, AbsentPairGivesZeroBlock) {
  Rng rng(8);
  RowMatrix c(2, 2);
  c << 1, 0, 0, 1;
  const Codebook cb(c);
  const PairBasis basis = basis_from(cb, rng, 1.0);
  // Every cell in cluster 0: blocks touching cluster 1 see no pairs.
  const DescriptorGrid g("g", 0, 2, 2, 2, {1, 0.1f, 1, 0.2f, 1, 0.3f, 1, 0.4f});
  const RawSignature sig = encode_raw(g.normalized(), cb, basis, 1);
  EXPECT_EQ(sig.block(0, 1).norm(), 0.0);
  EXPECT_EQ(sig.block(1, 0).norm(), 0.0);
  EXPECT_EQ(sig.block(1, 1).norm(), 0.0);
  EXPECT_GT(sig.block(0, 0).norm(), 0.0);
}

TEST(Encode, SinglePairMatchesHandFormula) {
  Rng rng(9);
  RowMatrix c(2, 3);
  c << 1, 0, 0, 0, 1, 0;
  const Codebook cb(c);
  const PairBasis basis = basis_from(cb, rng, 1.0);
  const DescriptorGrid g = DescriptorGrid("g", 0, 1, 2, 3, {0.9f, 0.1f, 0.3f, 0.2f, 0.8f, -0.1f}).normalized();
  const RawSignature sig = encode_raw(g, cb, basis, 1);
  const PairFactors& f = basis.at(0, 1);
  ASSERT_GT(f.rank(), 0);
  Vector xr(3), xu(3);
  for (int i = 0; i < 3; ++i) xr(i) = g.descriptor(0)[static_cast<std::size_t>(i)], xu(i) = g.descriptor(1)[static_cast<std::size_t>(i)];
  const Matrix want = (f.u.transpose() * xr) * (f.v.transpose() * xu).transpose() -
                      Matrix(f.singular_values.asDiagonal());
  EXPECT_LT((Matrix(sig.block(0, 1)) - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encode, ModelMismatchIsArgumentError) {
  Rng rng(10);
  const Codebook cb = oracle::random_codebook(rng, 2, 3);
  const PairBasis basis = basis_from(cb, rng, 0.9);
  const Codebook other = oracle::random_codebook(rng, 3, 3);
  EXPECT_THROW(encode_raw(oracle::random_grid(rng, 2, 2, 3), other, basis, 1), ArgumentError);
  EXPECT_THROW(encode_raw(oracle::random_grid(rng, 2, 2, 4), cb, basis, 1), ArgumentError);
}

TEST(RawSignatureFile, RoundTrip) {
  test::TempDir dir;
  Rng rng(11);
  const Codebook cb = oracle::random_codebook(rng, 2, 3);
  const PairBasis basis = basis_from(cb, rng, 0.9);
  RawSignature sig = encode_raw(oracle::random_grid(rng, 3, 3, 3, "im"), cb, basis, 1);
  sig.resolution = 1024;
  const auto path = dir / artifact_name("im", 1024, ".raw");
  save_raw_signature(sig, path);
  const RawSignature back = load_raw_signature(path);
  EXPECT_EQ(back.image_id, "im");
  EXPECT_EQ(back.resolution, 1024);
  EXPECT_TRUE(back.layout == sig.layout);
  EXPECT_EQ(back.values, sig.values);
}

// --- oracles ---------------------------------------------------------------

TEST(MatchingKernel, OrthonormalPairCountsTwice) {
  const DescriptorGrid g("g", 0, 1, 2, 2, {1, 0, 0, 1});
  const Codebook cb(RowMatrix::Ones(1, 2));
  EXPECT_DOUBLE_EQ(oracle::matching_kernel_oracle(g, g, cb, 1), 2.0);
}

TEST(MatchingKernel, DisjointClustersGiveZero) {
  RowMatrix c(2, 2);
  c << 1, 0, 0, 1;
  const Codebook cb(c);
  const DescriptorGrid a("a", 0, 1, 2, 2, {1, 0, 0.9f, 0.1f});
  const DescriptorGrid b("b", 0, 1, 2, 2, {0, 1, 0.1f, 0.9f});
  EXPECT_EQ(oracle::matching_kernel_oracle(a, b, cb, 1), 0.0);
}

TEST(MatchingKernel, EqualsTensorInnerProductOnThreeByThree) {
  Rng rng(12);
  const Codebook cb = oracle::random_codebook(rng, 3, 4);
  const auto a = oracle::random_grid(rng, 3, 3, 4), b = oracle::random_grid(rng, 3, 3, 4);
  const double lhs = oracle::tensor_dot(oracle::naive_sta_tensor(a, cb, 1), oracle::naive_sta_tensor(b, cb, 1));
  EXPECT_TRUE(oracle::relatively_close(lhs, oracle::matching_kernel_oracle(a, b, cb, 1), 1e-9));
}

TEST(NaiveTensor, EmptyAndSinglePair) {
  const Codebook cb(RowMatrix::Ones(1, 2));
  const auto empty = oracle::naive_sta_tensor(DescriptorGrid("e", 0, 1, 1, 2, {1, 0}), cb, 1);
  for (double x : empty) EXPECT_EQ(x, 0.0);

  RowMatrix c(2, 2);
  c << 1, 0, 0, 1;
  const Codebook two(c);
  // Grid of one pair in each direction; with the center excluded, the
  // (0, 1) block holds exactly x_r x_u^T.
  const DescriptorGrid g("g", 0, 1, 2, 2, {0.8f, 0.6f, 0.6f, 0.8f});
  const auto t = oracle::naive_sta_tensor(g, two, 1);
  const Matrix want = outer(g.descriptor(0), g.descriptor(1));
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      EXPECT_DOUBLE_EQ(t[static_cast<std::size_t>((0 * 2 + 1) * 4 + i * 2 + j)], want(i, j));
      EXPECT_EQ(t[static_cast<std::size_t>((0 * 2 + 0) * 4 + i * 2 + j)], 0.0);
    }
  }
}

TEST(NaiveTensor, BlocksEqualPairStatistics) {
  Rng rng(13);
  const Codebook cb = oracle::random_codebook(rng, 3, 3);
  const auto g = oracle::random_grid(rng, 4, 4, 3);
  const auto t = oracle::naive_sta_tensor(g, cb, 1);
  const auto s = accumulate_pair_stats(std::vector{g}, cb, 1);
  for (std::size_t p = 0; p < 9; ++p) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        EXPECT_NEAR(t[p * 9 + static_cast<std::size_t>(i * 3 + j)], s.sum(p)(i, j), 1e-12);
      }
    }
  }
}

TEST(NaiveTensor, RefusesHugeTensors) {
  Rng rng(14);
  const Codebook cb = oracle::random_codebook(rng, 64, 64);
  EXPECT_THROW(oracle::naive_sta_tensor(oracle::random_grid(rng, 1, 1, 64), cb, 1), ResourceError);
}

TEST(LinearizationProperty, BothCenterReadings) {
  const auto report = oracle::run_linearization_suite(99, 30);
  EXPECT_EQ(report.failed, 0);
  EXPECT_EQ(report.passed, 60);
}

TEST(LinearizationProperty, RadiusTwo) {
  const auto report = oracle::run_linearization_suite(5, 10, 2);
  EXPECT_EQ(report.failed, 0);
}

}  // namespace
