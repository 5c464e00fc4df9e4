#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "costroute/representations.hpp"
#include "test_util.hpp"

using namespace costroute;
using costroute::testing::TempDir;
using costroute::testing::tiny_dataset;

TEST(KMeans, TwoPointsTwoClusters) {
  Matrix x(2, 2);
  x << 0, 0, 0, 1;
  const auto m = kmeans(x, 2, 7);
  EXPECT_EQ(m.inertia, 0.0);
  std::vector<std::vector<double>> c{{m.centroids(0, 0), m.centroids(0, 1)}, {m.centroids(1, 0), m.centroids(1, 1)}};
  std::ranges::sort(c);
  EXPECT_EQ(c[0], (std::vector<double>{0, 0}));
  EXPECT_EQ(c[1], (std::vector<double>{0, 1}));
}

TEST(KMeans, SingleClusterIsMean) {
  std::mt19937_64 rng(1);
  const Matrix x = costroute::testing::random_matrix(rng, 30, 4);
  const auto m = kmeans(x, 1, 3);
  EXPECT_LE((m.centroids.row(0) - x.colwise().mean()).cwiseAbs().maxCoeff(), 1e-12);
  const double inertia = (x.rowwise() - x.colwise().mean()).squaredNorm();
  EXPECT_NEAR(m.inertia, inertia, 1e-9);
}

TEST(KMeans, RecoversSeparatedGaussians) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.1);
  const double centers[3][2] = {{0, 0}, {10, 0}, {0, 10}};
  Matrix x(60, 2);
  std::vector<int> label(60);
  for (int i = 0; i < 60; ++i) {
    label[i] = i % 3;
    x(i, 0) = centers[i % 3][0] + noise(rng);
    x(i, 1) = centers[i % 3][1] + noise(rng);
  }
  const auto m = kmeans(x, 3, 11);
  const auto a = m.assign_all(x);
  // Same partition up to relabeling: points share a cluster iff they share a label.
  for (int i = 0; i < 60; ++i) {
    for (int j = 0; j < 60; ++j) EXPECT_EQ(a[i] == a[j], label[i] == label[j]);
  }
}

TEST(KMeans, InertiaNonIncreasingAndDeterministic) {
  SynthSpec spec;
  spec.n = 500;
  const Matrix x = synth_generate(spec, 2).embeddings();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto m = kmeans(x, 20, seed);
    ASSERT_FALSE(m.inertia_history.empty());
    for (std::size_t t = 1; t < m.inertia_history.size(); ++t) {
      EXPECT_LE(m.inertia_history[t], m.inertia_history[t - 1] * (1 + 1e-12)) << "iteration " << t;
    }
    const auto again = kmeans(x, 20, seed);
    EXPECT_EQ(again.centroids, m.centroids);
  }
}

TEST(KMeans, TooFewDistinctPoints) {
  Matrix x(4, 2);
  x << 1, 1, 1, 1, 2, 2, 2, 2;
  EXPECT_THROW((void)kmeans(x, 3, 0), std::invalid_argument);
  EXPECT_NO_THROW((void)kmeans(x, 2, 0));
  EXPECT_THROW((void)kmeans(x, 0, 0), std::invalid_argument);
}

TEST(KMeans, AssignTiesGoToLowestIndex) {
  ClusterModel m;
  m.centroids = Matrix(2, 1);
  m.centroids << -1, 1;
  Eigen::RowVectorXd x(1);
  x << 0;
  EXPECT_EQ(m.assign(x), 0u);
}

TEST(Elbow, HandComputedSecondDifference) {
  const std::vector<std::size_t> c{1, 2, 3, 4};
  const std::vector<double> inertia{100, 20, 18, 17};
  EXPECT_EQ(elbow_from_inertia(c, inertia), 2u);
}

TEST(Elbow, LinearDecayPicksSmallestInterior) {
  const std::vector<std::size_t> c{1, 2, 3, 4, 5};
  const std::vector<double> inertia{50, 40, 30, 20, 10};
  EXPECT_EQ(elbow_from_inertia(c, inertia), 2u);
}

TEST(Elbow, NeedsThreeCandidates) {
  const std::vector<std::size_t> c{1, 2};
  const std::vector<double> inertia{10, 5};
  EXPECT_THROW((void)elbow_from_inertia(c, inertia), std::invalid_argument);
}

TEST(Elbow, FindsTwentyLatentClusters) {
  SynthSpec spec;
  spec.n = 2000;
  spec.clusters = 20;
  spec.cluster_spread = 0.35;
  const Matrix x = normalize_embeddings(synth_generate(spec, 1)).embeddings();
  const std::vector<std::size_t> candidates{5, 10, 20, 40};
  EXPECT_EQ(select_cluster_count(x, candidates, 1), 20u);
}

TEST(Representations, SingleClusterFullSampleIsOverallMean) {
  const auto ds = tiny_dataset({{1, 0}, {0, 1}, {1, 1}}, {{1.0, 0.2}, {0.0, 0.4}, {0.5, 0.9}}, {{0, 0}, {0, 0}, {0, 0}});
  const auto clusters = kmeans(ds.embeddings(), 1, 0);
  const auto reps = build_representations(ds, clusters, 1.0, 0);
  ASSERT_EQ(reps.size(), 2u);
  EXPECT_NEAR(reps[0].values[0], 0.5, 1e-15);
  EXPECT_NEAR(reps[1].values[0], 0.5, 1e-15);
  EXPECT_EQ(reps[0].support[0], 3u);
  EXPECT_EQ(reps[0].model, "m0");
}

TEST(Representations, ConstantModelIsAllOnes) {
  SynthSpec spec;
  spec.n = 200;
  const auto raw = synth_generate(spec, 3);
  auto recs = raw.records();
  for (auto& r : recs) r.quality[2] = 1.0;
  const RoutingDataset ds(raw.pool(), raw.dim(), recs);
  const auto clusters = kmeans(ds.embeddings(), 8, 1);
  for (double frac : {0.05, 0.2, 1.0}) {
    const auto reps = build_representations(ds, clusters, frac, 9);
    for (double v : reps[2].values) EXPECT_EQ(v, 1.0);
  }
}

TEST(Representations, HandBuiltPerClusterMeans) {
  // Two obvious clusters: records 0,1 near (1,0); records 2,3 near (0,1).
  const auto ds = tiny_dataset({{1, 0}, {0.9, 0.1}, {0, 1}, {0.1, 0.9}},
                               {{1.0, 0.0}, {0.5, 0.5}, {0.0, 1.0}, {0.25, 0.75}},
                               {{0, 0}, {0, 0}, {0, 0}, {0, 0}});
  const auto clusters = kmeans(ds.embeddings(), 2, 4);
  const auto reps = build_representations(ds, clusters, 1.0, 4);
  const auto c0 = clusters.assign(ds.embeddings().row(0));
  const auto c2 = clusters.assign(ds.embeddings().row(2));
  ASSERT_NE(c0, c2);
  EXPECT_DOUBLE_EQ(reps[0].values[c0], 0.75);
  EXPECT_DOUBLE_EQ(reps[0].values[c2], 0.125);
  EXPECT_DOUBLE_EQ(reps[1].values[c0], 0.25);
  EXPECT_DOUBLE_EQ(reps[1].values[c2], 0.875);
  EXPECT_EQ(reps[1].support[c0], 2u);
}

TEST(Representations, FullSampleMatchesBruteForceMeans) {
  SynthSpec spec;
  spec.n = 300;
  const auto ds = synth_generate(spec, 6);
  const auto clusters = kmeans(ds.embeddings(), 10, 6);
  const auto reps = build_representations(ds, clusters, 1.0, 6);
  const auto assign = clusters.assign_all(ds.embeddings());
  for (std::size_t m = 0; m < ds.num_models(); ++m) {
    for (std::size_t c = 0; c < 10; ++c) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (assign[i] == c) {
          sum += ds[i].quality[m];
          ++count;
        }
      }
      ASSERT_GT(count, 0u);
      EXPECT_NEAR(reps[m].values[c], sum / static_cast<double>(count), 1e-12);
      EXPECT_EQ(reps[m].support[c], count);
    }
  }
}

TEST(Representations, SampleSizesAreCeilOfFraction) {
  SynthSpec spec;
  spec.n = 300;
  const auto ds = synth_generate(spec, 6);
  const auto clusters = kmeans(ds.embeddings(), 10, 6);
  const auto sizes = clusters.assign_all(ds.embeddings());
  const auto reps = build_representations(ds, clusters, 0.2, 1);
  for (std::size_t c = 0; c < 10; ++c) {
    const auto n = static_cast<double>(std::ranges::count(sizes, c));
    EXPECT_EQ(reps[0].support[c], static_cast<std::size_t>(std::ceil(0.2 * n)));
  }
}

TEST(Representations, EmptyClusterImputesGlobalMean) {
  const auto ds = tiny_dataset({{1, 0}, {0.9, 0.1}}, {{1.0, 0.0}, {0.5, 0.5}}, {{0, 0}, {0, 0}});
  ClusterModel clusters;
  clusters.centroids = Matrix(2, 2);
  clusters.centroids << 1, 0, -5, -5;  // second cluster gets no training record
  const auto reps = build_representations(ds, clusters, 1.0, 0);
  EXPECT_EQ(reps[0].support[1], 0u);
  EXPECT_DOUBLE_EQ(reps[0].values[1], 0.75);
  EXPECT_DOUBLE_EQ(reps[1].values[1], 0.25);
}

TEST(Representations, PermutationEquivariantInClusterLabels) {
  SynthSpec spec;
  spec.n = 200;
  const auto ds = synth_generate(spec, 8);
  const auto clusters = kmeans(ds.embeddings(), 6, 8);
  std::vector<Eigen::Index> perm{3, 0, 5, 1, 4, 2};
  ClusterModel permuted = clusters;
  for (Eigen::Index c = 0; c < 6; ++c) permuted.centroids.row(c) = clusters.centroids.row(perm[c]);
  const auto a = build_representations(ds, clusters, 1.0, 0);
  const auto b = build_representations(ds, permuted, 1.0, 0);
  for (std::size_t m = 0; m < a.size(); ++m) {
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(b[m].values[c], a[m].values[static_cast<std::size_t>(perm[c])], 1e-12);
  }
}

TEST(Representations, Errors) {
  const auto ds = tiny_dataset({{1, 0}, {0, 1}}, {{1.0, 0.0}, {0.5, 0.5}}, {{0, 0}, {0, 0}});
  const auto clusters = kmeans(ds.embeddings(), 1, 0);
  EXPECT_THROW((void)build_representations(ds, clusters, 0.0, 0), std::invalid_argument);
  EXPECT_THROW((void)build_representations(ds, clusters, 1.5, 0), std::invalid_argument);
  ClusterModel wrong;
  wrong.centroids = Matrix::Zero(1, 3);
  EXPECT_THROW((void)build_representations(ds, wrong, 1.0, 0), std::invalid_argument);
  const RoutingDataset empty(ds.pool(), 2, {});
  EXPECT_THROW((void)build_representations(empty, clusters, 1.0, 0), std::invalid_argument);
}

TEST(Representations, FileRoundTripAndPoolAlignment) {
  TempDir dir;
  SynthSpec spec;
  spec.n = 100;
  const auto ds = synth_generate(spec, 2);
  const auto reps = build_representations(ds, kmeans(ds.embeddings(), 4, 2), 0.3, 2);
  save_representations(reps, dir / "reps.tsv");
  const auto back = load_representations(dir / "reps.tsv");
  EXPECT_EQ(back, reps);

  const std::vector<std::string> order{"model-4", "model-0"};
  const Matrix m = representation_matrix(back, order);
  ASSERT_EQ(m.rows(), 2);
  EXPECT_EQ(m(0, 1), reps[4].values[1]);
  EXPECT_EQ(m(1, 3), reps[0].values[3]);
  const std::vector<std::string> unknown{"nope"};
  EXPECT_THROW((void)representation_matrix(back, unknown), std::invalid_argument);
}
