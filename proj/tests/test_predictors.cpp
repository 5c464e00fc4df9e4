#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include "costroute/config_json.hpp"
#include "costroute/predictors.hpp"
#include "costroute/representations.hpp"
#include "costroute/training.hpp"
#include "test_util.hpp"

using namespace costroute;
using costroute::testing::random_matrix;
using costroute::testing::TempDir;
using costroute::testing::tiny_dataset;

namespace {

struct Fixture {
  DatasetSplit parts;
  Representations reps;
};

Fixture make_fixture(std::size_t n, double noise, std::uint64_t seed) {
  SynthSpec spec;
  spec.n = n;
  spec.noise = noise;
  auto ds = normalize_embeddings(synth_generate(spec, seed));
  Fixture f{split(ds, SplitSpec{0.75, 0.05, 0.20, seed}), {}};
  f.reps = build_representations(f.parts.train, kmeans(f.parts.train.embeddings(), 20, seed), 0.2, seed);
  return f;
}

double mse(const Matrix& a, const Matrix& b) { return (a - b).squaredNorm() / static_cast<double>(a.size()); }

PredictorConfig quick(Architecture a, Target t, std::size_t epochs) {
  auto c = PredictorConfig::defaults(a, t);
  c.epochs = epochs;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(PredictorConfig, Defaults) {
  const auto q = PredictorConfig::defaults(Architecture::attention, Target::quality);
  EXPECT_EQ(q.learning_rate, 1e-3);
  EXPECT_EQ(q.weight_decay, 1e-5);
  EXPECT_EQ(q.batch_size, 1024u);
  EXPECT_EQ(q.epochs, 1000u);
  EXPECT_EQ(q.internal_dim, 20u);
  const auto c = PredictorConfig::defaults(Architecture::attention, Target::cost);
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.weight_decay, 1e-7);
  EXPECT_EQ(c.internal_dim, 20u);
  EXPECT_EQ(PredictorConfig::defaults(Architecture::fcn2, Target::quality).resolved_hidden_dims(),
            (std::vector<std::size_t>{256}));
  EXPECT_EQ(PredictorConfig::defaults(Architecture::fcn3_emb, Target::cost).resolved_hidden_dims(),
            (std::vector<std::size_t>{256, 64}));
  EXPECT_EQ(PredictorConfig::defaults(Architecture::knn, Target::quality).k, 20u);
}

TEST(PredictorConfig, NamesRoundTripAndValidation) {
  for (auto a : {Architecture::attention, Architecture::regression, Architecture::fcn2, Architecture::fcn3,
                 Architecture::regression_emb, Architecture::fcn2_emb, Architecture::fcn3_emb, Architecture::knn}) {
    EXPECT_EQ(parse_architecture(to_string(a)), a);
  }
  EXPECT_THROW((void)parse_architecture("transformer"), std::invalid_argument);
  EXPECT_EQ(parse_target("cost"), Target::cost);
  auto c = PredictorConfig::defaults(Architecture::fcn2, Target::quality);
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PredictorConfig::defaults(Architecture::regression, Target::quality);
  c.hidden_dims = {4};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PredictorConfig::defaults(Architecture::knn, Target::quality);
  c.k = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Regression, ExactLinearFitWithoutIntercept) {
  Matrix q(2, 1), t(2, 1);
  q << 1, 2;
  t << 1, 2;
  const Matrix x = solve_least_squares(q, t, 1e-8, false);
  ASSERT_EQ(x.rows(), 1);
  EXPECT_NEAR(x(0, 0), 1.0, 1e-8);
}

TEST(Regression, NormalEquationOptimality) {
  std::mt19937_64 rng(2);
  const Matrix q = random_matrix(rng, 200, 8);
  const Matrix t = random_matrix(rng, 200, 3);
  const Matrix x = solve_least_squares(q, t, 1e-8, false);
  const Matrix residual = q.transpose() * (q * x - t);
  const double scale = (q.transpose() * t).cwiseAbs().maxCoeff();
  EXPECT_LE(residual.cwiseAbs().maxCoeff(), 1e-6 * scale);
}

TEST(Regression, InterceptColumnIsLastRow) {
  Matrix q(3, 1), t(3, 1);
  q << 0, 1, 2;
  t << 5, 7, 9;
  const Matrix x = solve_least_squares(q, t);
  ASSERT_EQ(x.rows(), 2);
  EXPECT_NEAR(x(0, 0), 2.0, 1e-6);
  EXPECT_NEAR(x(1, 0), 5.0, 1e-6);
}

TEST(Regression, ClosedFormBeatsGradientTrainedLinear) {
  std::mt19937_64 rng(3);
  const Matrix q = random_matrix(rng, 200, 8);
  const Matrix w = random_matrix(rng, 8, 2);
  const Matrix t = q * w + random_matrix(rng, 200, 2, 0.3);
  const Matrix x = solve_least_squares(q, t);
  Matrix design(200, 9);
  design << q, Matrix::Ones(200, 1);
  const double closed = mse(design * x, t);
  const MlpNetwork linear(8, {}, 2, Head::identity);
  for (std::uint64_t seed : {1u, 2u}) {
    std::mt19937_64 init(seed);
    Vector p = linear.initial_params(init);
    (void)fit_network(linear, p, q, t, Matrix(0, 8), Matrix(0, 2), Matrix(), {1e-2, 200, 0.0, 500, seed});
    EXPECT_LE(closed, linear.loss(p, q, Matrix(), t) + 1e-6);
  }
}

TEST(Regression, PredictorClampsToTargetRange) {
  const auto ds = tiny_dataset({{1, 0}, {0, 1}, {1, 1}}, {{0.0, 1.0}, {1.0, 0.0}, {1.0, 1.0}},
                               {{0.0, 0.01}, {0.02, 0.0}, {0.0, 0.0}});
  const auto p = fit_regression(ds, Target::quality);
  Matrix far(1, 2);
  far << 10, -10;
  const Matrix out = p.predict(far, Matrix());
  EXPECT_GE(out.minCoeff(), 0.0);
  EXPECT_LE(out.maxCoeff(), 1.0);
  const auto c = fit_regression(ds, Target::cost);
  EXPECT_GE(c.predict(far, Matrix()).minCoeff(), 0.0);
}

TEST(Knn, SingleNeighbourAndFullNeighbourhood) {
  std::mt19937_64 rng(5);
  const Matrix pts = random_matrix(rng, 30, 4);
  const Matrix tgt = random_matrix(rng, 30, 3);
  for (Eigen::Index i = 0; i < 30; ++i) {
    EXPECT_EQ(knn_predict(pts, tgt, pts.row(i), 1), tgt.row(i));
  }
  const Eigen::RowVectorXd q = random_matrix(rng, 1, 4).row(0);
  EXPECT_LE((knn_predict(pts, tgt, q, 30) - tgt.colwise().mean()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW((void)knn_predict(pts, tgt, q, 31), std::invalid_argument);
  EXPECT_THROW((void)knn_predict(pts, tgt, q, 0), std::invalid_argument);
}

TEST(Knn, MatchesExhaustiveScan) {
  Matrix pts(5, 2);
  pts << 0, 0, 1, 0, 0, 2, 3, 3, -1, -1;
  Matrix tgt(5, 1);
  tgt << 10, 20, 30, 40, 50;
  Eigen::RowVectorXd q(2);
  q << 0.4, 0.1;
  // Squared distances: 0.17, 0.37, 3.77, 15.77, 3.17 -> nearest three are rows 0, 1, 4.
  std::vector<std::pair<double, int>> d;
  for (int i = 0; i < 5; ++i) d.emplace_back((pts.row(i) - q).squaredNorm(), i);
  std::ranges::sort(d);
  const double expect = (tgt(d[0].second, 0) + tgt(d[1].second, 0) + tgt(d[2].second, 0)) / 3.0;
  EXPECT_DOUBLE_EQ(expect, (10.0 + 20.0 + 50.0) / 3.0);
  EXPECT_DOUBLE_EQ(knn_predict(pts, tgt, q, 3)(0), expect);
}

TEST(Knn, TiesGoToRecordOrder) {
  Matrix pts(3, 1);
  pts << 1, -1, 1;
  Matrix tgt(3, 1);
  tgt << 1, 2, 3;
  Eigen::RowVectorXd q(1);
  q << 0;
  EXPECT_EQ(knn_predict(pts, tgt, q, 1)(0), 1.0);
  EXPECT_EQ(knn_predict(pts, tgt, q, 2)(0), 1.5);
}

TEST(Knn, PredictorUsesQualityAndCostTargets) {
  const auto f = make_fixture(200, 0.1, 4);
  const auto q = make_knn(f.parts.train, Target::quality, 1);
  const auto c = make_knn(f.parts.train, Target::cost, 1);
  const Matrix x = f.parts.train.embeddings().topRows(3);
  EXPECT_EQ(q.predict(x, Matrix()), f.parts.train.quality().topRows(3));
  EXPECT_EQ(c.predict(x, Matrix()), f.parts.train.costs().topRows(3));
  const Eigen::RowVectorXd row = x.row(0);
  EXPECT_EQ(knn_predict(f.parts.train, row, 1), f.parts.train.quality().row(0));
}

TEST(PredictMatrix, BatchEqualsPerQueryLoop) {
  const auto f = make_fixture(400, 0.1, 5);
  for (auto arch : {Architecture::attention, Architecture::fcn2_emb, Architecture::fcn3, Architecture::knn}) {
    const auto p = train(f.parts.train, f.parts.val, f.reps, quick(arch, Target::quality, 3));
    const auto test = f.parts.test.subset(std::vector<std::size_t>(80));  // first record, 80 times
    const auto batch = predict_matrix(p, f.parts.test, f.reps);
    ASSERT_EQ(batch.values.rows(), static_cast<Eigen::Index>(f.parts.test.size()));
    for (std::size_t i = 0; i < f.parts.test.size(); ++i) {
      const std::vector<std::size_t> one{i};
      const auto single = predict_matrix(p, f.parts.test.subset(one), f.reps);
      ASSERT_EQ(single.values.rows(), 1);
      EXPECT_LE((single.values.row(0) - batch.values.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff(), 1e-12)
          << to_string(arch) << " row " << i;
    }
    (void)test;
  }
}

TEST(PredictMatrix, RowPermutationPermutesRows) {
  const auto f = make_fixture(300, 0.1, 6);
  const auto p = train(f.parts.train, f.parts.val, f.reps, quick(Architecture::attention, Target::cost, 3));
  std::vector<std::size_t> order(f.parts.test.size());
  std::iota(order.begin(), order.end(), 0u);
  std::ranges::reverse(order);
  const auto a = predict_matrix(p, f.parts.test, f.reps).values;
  const auto b = predict_matrix(p, f.parts.test.subset(order), f.reps).values;
  for (std::size_t i = 0; i < order.size(); ++i) {
    EXPECT_LE((b.row(static_cast<Eigen::Index>(i)) - a.row(static_cast<Eigen::Index>(order[i]))).cwiseAbs().maxCoeff(),
              1e-12);
  }
}

TEST(PredictMatrix, HeadsBoundOutputs) {
  const auto f = make_fixture(300, 0.1, 7);
  for (auto arch : {Architecture::attention, Architecture::fcn2, Architecture::regression_emb}) {
    const auto q = predict_matrix(train(f.parts.train, f.parts.val, f.reps, quick(arch, Target::quality, 2)),
                                  f.parts.test, f.reps);
    EXPECT_GT(q.values.minCoeff(), 0.0);
    EXPECT_LT(q.values.maxCoeff(), 1.0);
    const auto c = predict_matrix(train(f.parts.train, f.parts.val, f.reps, quick(arch, Target::cost, 2)),
                                  f.parts.test, f.reps);
    EXPECT_GE(c.values.minCoeff(), 0.0);
    EXPECT_EQ(c.target, Target::cost);
  }
}

TEST(PredictMatrix, NonFiniteOutputNamesQuery) {
  const auto f = make_fixture(100, 0.1, 8);
  const auto config = quick(Architecture::fcn2, Target::quality, 1);
  const auto net = make_network(config, f.parts.train.dim(), 0, f.parts.train.num_models());
  Vector params = Vector::Constant(static_cast<Eigen::Index>(net->num_params()), std::nan(""));
  const auto p = make_network_predictor(config, f.parts.train.pool(), f.parts.train.dim(), 0, params);
  try {
    (void)predict_matrix(p, f.parts.test, f.reps);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_THAT(e.what(), ::testing::HasSubstr(f.parts.test[0].id));
  }
}

TEST(PredictMatrix, RejectsForeignPool) {
  const auto f = make_fixture(100, 0.1, 9);
  const auto p = train(f.parts.train, f.parts.val, f.reps, quick(Architecture::fcn2, Target::quality, 1));
  const std::vector<std::string> sub{"model-1", "model-0"};
  EXPECT_THROW((void)predict_matrix(p, f.parts.test.select_models(sub), f.reps), std::invalid_argument);
}

TEST(Training, BitwiseDeterministicPerSeed) {
  const auto f = make_fixture(300, 0.1, 10);
  for (auto arch : {Architecture::attention, Architecture::fcn2}) {
    const auto a = train(f.parts.train, f.parts.val, f.reps, quick(arch, Target::quality, 5));
    const auto b = train(f.parts.train, f.parts.val, f.reps, quick(arch, Target::quality, 5));
    EXPECT_EQ(a.params(), b.params());
    auto other = quick(arch, Target::quality, 5);
    other.seed = 4;
    EXPECT_NE(train(f.parts.train, f.parts.val, f.reps, other).params(), a.params());
  }
}

TEST(Training, CostBiasStartsAtMeanCost) {
  const auto f = make_fixture(200, 0.1, 11);
  auto c = quick(Architecture::attention, Target::cost, 1);
  c.learning_rate = 1e-12;
  const auto p = train(f.parts.train, f.parts.val, f.reps, c);
  const double mean_cost = f.parts.train.costs().mean();
  EXPECT_NEAR(apply_head(Head::softplus, p.params()[p.params().size() - 1]), mean_cost, 1e-9);
}

TEST(Training, EmptyTrainingSetFails) {
  const auto f = make_fixture(100, 0.1, 12);
  const RoutingDataset empty(f.parts.train.pool(), f.parts.train.dim(), {});
  EXPECT_THROW((void)train(empty, f.parts.val, f.reps, quick(Architecture::fcn2, Target::quality, 1)), TrainingError);
  EXPECT_THROW((void)fit_regression(empty, Target::quality), TrainingError);
}

TEST(Training, AttentionBeatsPerModelMean) {
  // n=1000, K=5, G=20 synthetic pool.
  const auto f = make_fixture(1000, 0.1, 13);
  const auto p = train(f.parts.train, f.parts.val, f.reps, quick(Architecture::attention, Target::quality, 1000));
  const Matrix truth = f.parts.test.quality();
  const Eigen::RowVectorXd mean = f.parts.train.quality().colwise().mean();
  const double baseline = (truth.rowwise() - mean).squaredNorm() / static_cast<double>(truth.size());
  const double model = mse(predict_matrix(p, f.parts.test, f.reps).values, truth);
  EXPECT_LT(model, baseline);
}

TEST(Artifact, RoundTripPreservesPredictions) {
  TempDir dir;
  const auto f = make_fixture(200, 0.1, 14);
  for (auto arch : {Architecture::attention, Architecture::regression, Architecture::fcn3, Architecture::fcn2_emb,
                    Architecture::regression_emb, Architecture::knn}) {
    const auto p = train(f.parts.train, f.parts.val, f.reps, quick(arch, Target::cost, 2));
    const auto path = dir / (std::string(to_string(arch)) + ".bin");
    save_predictor(p, path);
    const auto back = load_predictor(path, arch);
    EXPECT_EQ(to_json(back.config()), to_json(p.config()));
    EXPECT_EQ(back.pool(), p.pool());
    EXPECT_EQ(predict_matrix(back, f.parts.test, f.reps).values, predict_matrix(p, f.parts.test, f.reps).values)
        << to_string(arch);
  }
}

TEST(Artifact, RejectsMismatchAndCorruption) {
  TempDir dir;
  const auto f = make_fixture(200, 0.1, 15);
  const auto p = train(f.parts.train, f.parts.val, f.reps, quick(Architecture::fcn2, Target::quality, 1));
  save_predictor(p, dir / "p.bin");
  EXPECT_THROW((void)load_predictor(dir / "p.bin", Architecture::attention), std::runtime_error);
  EXPECT_THROW((void)load_predictor(dir / "missing.bin"), std::runtime_error);

  costroute::testing::write_text(dir / "junk.bin", "definitely not a predictor");
  EXPECT_THROW((void)load_predictor(dir / "junk.bin"), std::runtime_error);

  const auto bytes = costroute::testing::read_text(dir / "p.bin");
  costroute::testing::write_text(dir / "short.bin", bytes.substr(0, bytes.size() - 16));
  EXPECT_THROW((void)load_predictor(dir / "short.bin"), std::runtime_error);
}

TEST(Training, FcnLearnsConstantQuality) {
  auto f = make_fixture(1000, 0.1, 16);
  auto constant = [](const RoutingDataset& ds) {
    auto recs = ds.records();
    for (auto& r : recs) std::ranges::fill(r.quality, 0.7);
    return RoutingDataset(ds.pool(), ds.dim(), recs);
  };
  const auto tr = constant(f.parts.train);
  const auto va = constant(f.parts.val);
  auto config = quick(Architecture::fcn2, Target::quality, 1000);
  config.batch_size = 32;
  const auto p = train(tr, va, f.reps, config);
  const auto pred = predict_matrix(p, f.parts.test, f.reps);
  EXPECT_LE((pred.values.array() - 0.7).abs().maxCoeff(), 0.01);
}

TEST(Training, AttentionFitsNoiselessTargets) {
  // n=1000, K=5, noise 0: the final training MSE after 1000 epochs. The batch
  // is scaled down with the data so the run takes ~6 optimizer steps per epoch.
  const auto f = make_fixture(1000, 0.0, 17);
  auto config = quick(Architecture::attention, Target::quality, 1000);
  config.batch_size = 128;
  const auto p = train(f.parts.train, f.parts.val, f.reps, config);
  const double train_mse = mse(predict_matrix(p, f.parts.train, f.reps).values, f.parts.train.quality());
  RecordProperty("attention_train_mse", std::to_string(train_mse));
  EXPECT_LT(train_mse, 0.01);
}

TEST(Training, EmbeddingVariantCompetitiveWithPlainFcn) {
  const auto f = make_fixture(1000, 0.0, 18);
  auto plain = quick(Architecture::fcn2, Target::quality, 1000);
  auto emb = quick(Architecture::fcn2_emb, Target::quality, 1000);
  plain.batch_size = emb.batch_size = 128;
  const double a = mse(predict_matrix(train(f.parts.train, f.parts.val, f.reps, plain), f.parts.test, f.reps).values,
                       f.parts.test.quality());
  const double b = mse(predict_matrix(train(f.parts.train, f.parts.val, f.reps, emb), f.parts.test, f.reps).values,
                       f.parts.test.quality());
  RecordProperty("fcn2_test_mse", std::to_string(a));
  RecordProperty("fcn2_emb_test_mse", std::to_string(b));
  EXPECT_LE(b, 1.5 * a);
}

TEST(Regression, GradientTrainedLinearMatchesClosedForm) {
  std::mt19937_64 rng(21);
  const Matrix q = random_matrix(rng, 200, 8);
  const Matrix t = q * random_matrix(rng, 8, 1) + random_matrix(rng, 200, 1, 0.1);
  const Matrix x = solve_least_squares(q, t);
  Matrix design(200, 9);
  design << q, Matrix::Ones(200, 1);
  const MlpNetwork linear(8, {}, 1, Head::identity);
  std::mt19937_64 init(1);
  Vector p = linear.initial_params(init);
  (void)fit_network(linear, p, q, t, Matrix(0, 8), Matrix(0, 1), Matrix(), {1e-2, 200, 0.0, 5000, 1});
  const Matrix diff = linear.forward(p, q, Matrix()) - design * x;
  EXPECT_LE(std::sqrt(diff.squaredNorm() / 200.0), 1e-3);
}
