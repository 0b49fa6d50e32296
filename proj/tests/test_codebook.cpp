#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "ista/codebook.hpp"
#include "ista/oracle.hpp"
#include "test_support.hpp"

namespace {

using namespace ista;

RowMatrix two_clouds(Rng& rng, int per_cloud, Vector* mean_a, Vector* mean_b) {
  RowMatrix x(2 * per_cloud, 3);
  for (int i = 0; i < 2 * per_cloud; ++i) {
    const double offset = i < per_cloud ? -10.0 : 10.0;
    for (int j = 0; j < 3; ++j) x(i, j) = offset + 0.1 * oracle::gaussian(rng);
  }
  *mean_a = x.topRows(per_cloud).colwise().mean().transpose();
  *mean_b = x.bottomRows(per_cloud).colwise().mean().transpose();
  return x;
}

TEST(KMeans, TwoSeparatedCloudsRecoverMeans) {
  Rng rng(1);
  Vector ma, mb;
  const RowMatrix x = two_clouds(rng, 200, &ma, &mb);
  const Codebook cb = fit_kmeans(x, {2, 42, 100, 1});
  const Vector c0 = cb.centers().row(0).transpose(), c1 = cb.centers().row(1).transpose();
  const bool direct = (c0 - ma).norm() < (c0 - mb).norm();
  EXPECT_LT(((direct ? c0 : c1) - ma).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(((direct ? c1 : c0) - mb).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(KMeans, SingleClusterIsGlobalMean) {
  Rng rng(2);
  const RowMatrix x = test::random_matrix(rng, 50, 4);
  const Codebook cb = fit_kmeans(x, {1, 0, 100, 1});
  EXPECT_LT((cb.centers().row(0) - x.colwise().mean()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(KMeans, TooFewDistinctRowsIsFitError) {
  RowMatrix x(6, 2);
  x << 1, 0, 1, 0, 0, 1, 0, 1, 1, 0, 0, 1;
  EXPECT_THROW(fit_kmeans(x, {3, 0, 10, 1}), FitError);
  EXPECT_THROW(fit_kmeans(RowMatrix(0, 2), {1, 0, 10, 1}), FitError);
}

TEST(KMeans, DeterministicAcrossRunsAndThreads) {
  Rng rng(5);
  const RowMatrix x = test::random_matrix(rng, 9000, 5);
  const Codebook a = fit_kmeans(x, {8, 17, 30, 1});
  const Codebook b = fit_kmeans(x, {8, 17, 30, 1});
  const Codebook c = fit_kmeans(x, {8, 17, 30, 3});
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_EQ(a.inertia(), c.inertia());
}

TEST(KMeans, InertiaNeverIncreasesAndEveryClusterIsUsed) {
  Rng rng(6);
  const RowMatrix x = test::random_matrix(rng, 600, 3);
  InertiaTrace trace;
  const Codebook cb = fit_kmeans(x, {12, 3, 100, 1}, &trace);
  ASSERT_GE(trace.size(), 2u);
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] * (1 + 1e-12));
  std::vector<int> owned(12, 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) owned[static_cast<std::size_t>(cb.assign(Vector(x.row(i).transpose())))]++;
  for (int n : owned) EXPECT_GE(n, 1);
}

TEST(KMeans, DuplicateHeavyDataStillFillsEveryCluster) {
  // Many copies of a few points: seeding must not leave a cluster empty.
  RowMatrix x(400, 2);
  for (Eigen::Index i = 0; i < 400; ++i) {
    const auto k = static_cast<double>(i % 5);
    x(i, 0) = k;
    x(i, 1) = k * k;
  }
  const Codebook cb = fit_kmeans(x, {5, 9, 50, 1});
  std::set<int> labels;
  for (Eigen::Index i = 0; i < x.rows(); ++i) labels.insert(cb.assign(Vector(x.row(i).transpose())));
  EXPECT_EQ(labels.size(), 5u);
}

TEST(Assign, ExactCenter) {
  RowMatrix c(5, 2);
  c << 0, 0, 1, 0, 2, 0, 3, 0, 4, 0;
  const Codebook cb(c);
  EXPECT_EQ(cb.assign(Vector(Vector::Unit(2, 0) * 3.0)), 3);
}

TEST(Assign, TiesGoToLowestIndex) {
  RowMatrix c(5, 2);
  c << 9, 9, 1, 0, 7, 7, 8, 8, -1, 0;
  const Codebook cb(c);
  EXPECT_EQ(cb.assign(Vector(Vector::Zero(2))), 1);
}

TEST(Assign, MatchesBruteForceScan) {
  Rng rng(7);
  const Codebook cb(test::random_matrix(rng, 16, 6));
  for (int t = 0; t < 500; ++t) {
    const Vector x = test::random_vector(rng, 6);
    int best = 0;
    double best_d = 1e300;
    for (int k = 0; k < 16; ++k) {
      double d = 0.0;
      for (int j = 0; j < 6; ++j) d += std::pow(x(j) - cb.centers()(k, j), 2);
      if (d < best_d) best_d = d, best = k;
    }
    EXPECT_EQ(cb.assign(x), best);
    EXPECT_EQ(cb.assign(x), cb.assign(x));
  }
}

TEST(Assign, DimensionMismatchIsArgumentError) {
  Rng rng(8);
  const Codebook cb(test::random_matrix(rng, 3, 4));
  EXPECT_THROW(cb.assign(Vector(Vector::Zero(5))), ArgumentError);
}

TEST(CodebookFile, RoundTripAndBadMagic) {
  test::TempDir dir;
  Rng rng(9);
  const Codebook cb(test::random_matrix(rng, 4, 3), 99);
  save_codebook(cb, dir / "m.codebook");
  const Codebook back = load_codebook(dir / "m.codebook");
  EXPECT_EQ(back, cb);
  EXPECT_EQ(back.seed(), 99u);
  std::ofstream(dir / "bad.codebook", std::ios::binary) << "ISTAXX01";
  EXPECT_THROW(load_codebook(dir / "bad.codebook"), FormatError);
}

TEST(Subsample, KeepsEverythingUnderCapAndIsSeeded) {
  Rng rng(10);
  const RowMatrix x = test::random_matrix(rng, 100, 2);
  EXPECT_EQ(subsample_rows(x, 1000, 1), x);
  const RowMatrix a = subsample_rows(x, 10, 4), b = subsample_rows(x, 10, 4);
  EXPECT_EQ(a.rows(), 10);
  EXPECT_EQ(a, b);
}

}  // namespace
