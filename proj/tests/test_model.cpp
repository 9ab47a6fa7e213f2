#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "dmba/dataset.hpp"
#include "dmba/errors.hpp"
#include "dmba/gradcheck.hpp"
#include "dmba/model.hpp"
#include "oracles.hpp"

using namespace dmba;

namespace {

Graph sbm(std::size_t n, double p_in, double p_out, double sigma, std::uint64_t seed, std::size_t blocks = 2) {
  SbmSpec s;
  s.n_nodes = n;
  s.blocks = blocks;
  s.p_in = p_in;
  s.p_out = p_out;
  s.feat_sigma = sigma;
  s.feat_dim = 8;
  s.seed = seed;
  Graph g = generate_sbm(s);
  SplitSpec sp;
  sp.seed = seed;
  g.masks = make_splits(g, sp);
  return g;
}

TrainConfig small_config(std::size_t depth = 2) {
  TrainConfig c;
  c.depth = depth;
  c.d_model = 8;
  c.d_state = 4;
  c.epochs = 60;
  c.seed = 3;
  return c;
}

Tensor z_of(DmbaModel& m, const Graph& g) {
  Tape tape;
  return forward(tape, m, g, normalize(g)).z.value();
}

}  // namespace

TEST(Forward, AlphaOneIsTheLocalBranchBitForBit) {
  const Graph g = sbm(30, 0.3, 0.05, 0.5, 1);
  TrainConfig c = small_config(3);
  c.alpha = 1.0;
  DmbaModel m = make_model(g.n_features(), 2, c);
  // A poisoned global branch proves it is never evaluated.
  m.gcamba.input_proj.value.fill(std::numeric_limits<double>::quiet_NaN());
  Tape tape;
  const Tensor local = lsemba_forward(tape, m.lsemba, g, normalize(g)).value();
  EXPECT_EQ(z_of(m, g), local);
}

TEST(Forward, AlphaZeroIsTheGlobalBranchBitForBit) {
  const Graph g = sbm(30, 0.3, 0.05, 0.5, 2);
  TrainConfig c = small_config(3);
  c.alpha = 0.0;
  DmbaModel m = make_model(g.n_features(), 2, c);
  m.lsemba.input_proj.value.fill(std::numeric_limits<double>::quiet_NaN());
  Tape tape;
  const Tensor global = gcamba_forward(tape, m.gcamba, g).value();
  EXPECT_EQ(z_of(m, g), global);
}

TEST(Forward, HalfAlphaIsTheMeanOfBothBranches) {
  const Graph g = sbm(30, 0.3, 0.05, 0.5, 3);
  TrainConfig c = small_config(3);
  c.alpha = 0.5;
  DmbaModel m = make_model(g.n_features(), 2, c);
  Tape tape;
  const Tensor local = lsemba_forward(tape, m.lsemba, g, normalize(g)).value();
  const Tensor global = gcamba_forward(tape, m.gcamba, g).value();
  const Tensor z = z_of(m, g);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], (local[i] + global[i]) / 2, 1e-15);
}

TEST(Forward, DropoutOnlyInTrainingMode) {
  const Graph g = sbm(30, 0.3, 0.05, 0.5, 4);
  DmbaModel m = make_model(g.n_features(), 2, small_config());
  const NormalizedPropagator prop = normalize(g);
  Tape tape;
  const Tensor eval1 = forward(tape, m, g, prop).logits.value();
  const Tensor eval2 = forward(tape, m, g, prop).logits.value();
  EXPECT_EQ(eval1, eval2);
  std::mt19937_64 rng(1);
  const ForwardOutput train_out = forward(tape, m, g, prop, &rng);
  EXPECT_EQ(train_out.z.value(), z_of(m, g));
  EXPECT_GT(max_abs_diff(train_out.logits.value(), eval1), 1e-6);
}

TEST(Forward, WidthMismatchThrows) {
  const Graph g = sbm(20, 0.3, 0.05, 0.5, 5);
  DmbaModel m = make_model(g.n_features(), 2, small_config());
  m.gcamba = make_gcamba(g.n_features(), 5, 4, 0.5, 1);
  Tape tape;
  EXPECT_THROW(forward(tape, m, g, normalize(g)), DimensionError);
}

TEST(Gradients, FullModelMatchesFiniteDifferences) {
  const Graph g = sbm(12, 0.5, 0.1, 0.5, 6);
  TrainConfig c;
  c.depth = 4;
  c.d_model = 8;
  c.d_state = 4;
  c.seed = 6;
  DmbaModel m = make_model(g.n_features(), 2, c);
  for (double& v : m.lsemba.block.b_delta.value.data()) v = 0.3;
  for (double& v : m.gcamba.block.b_delta.value.data()) v = 0.3;
  const NormalizedPropagator prop = normalize(g);
  const std::vector<bool> all(g.n_nodes, true);
  GradCheckOptions opts;
  opts.samples_per_param = 20;
  opts.seed = 6;
  const auto params = m.parameters();
  const GradCheckReport r = check_gradients(
      params, [&](Tape& tape) { return ad::cross_entropy(forward(tape, m, g, prop).logits, g.labels, all); }, opts);
  EXPECT_TRUE(r.passed) << r.summary();
  std::size_t expected = 0;
  for (const Parameter* p : params) expected += std::min<std::size_t>(20, p->value.size());
  EXPECT_EQ(r.checked, expected);
}

TEST(Evaluate, PerfectLogitsScoreOne) {
  const std::vector<int> labels{0, 2, 1, 1};
  Tensor logits({4, 3});
  for (std::size_t i = 0; i < 4; ++i) logits(i, labels[i]) = 1.0;
  EXPECT_EQ(accuracy(logits, labels, {true, true, true, true}), 1.0);
}

TEST(Evaluate, UniformLogitsPickClassZero) {
  const std::vector<int> labels{0, 1, 0, 2, 1, 0, 0};
  const std::vector<bool> mask{true, true, false, true, true, true, false};
  const Tensor logits({7, 3}, 0.25);
  std::size_t zeros = 0, total = 0;
  for (std::size_t i = 0; i < 7; ++i)
    if (mask[i]) {
      ++total;
      zeros += labels[i] == 0;
    }
  EXPECT_DOUBLE_EQ(accuracy(logits, labels, mask), static_cast<double>(zeros) / total);
}

TEST(Evaluate, EmptyMaskThrows) {
  const Graph g = sbm(20, 0.3, 0.05, 0.5, 7);
  DmbaModel m = make_model(g.n_features(), 2, small_config());
  EXPECT_THROW(evaluate(m, g, std::vector<bool>(20, false)), EmptySelectionError);
}

TEST(Evaluate, UntrainedModelIsNearChanceOnBalancedData) {
  const Graph g = sbm(200, 0.05, 0.01, 0.5, 8);
  double total = 0.0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    TrainConfig c = small_config();
    c.seed = 100 + s;
    DmbaModel m = make_model(g.n_features(), 2, c);
    total += evaluate(m, g, std::vector<bool>(200, true));
  }
  EXPECT_NEAR(total / seeds, 0.5, 0.15);
}

TEST(Train, SeparableSbmBeatsFeatureOnlyLogisticRegression) {
  const Graph g = sbm(40, 0.5, 0.02, 0.5, 9);
  TrainConfig c;
  c.depth = 4;
  c.epochs = 200;
  c.seed = 9;
  const RunReport r = train(g, c);
  const double lr_acc = oracle::logistic_regression_test_acc(g);
  EXPECT_GE(lr_acc, 0.8);
  EXPECT_GE(r.test_accuracy, 0.9);
  EXPECT_GE(r.test_accuracy, lr_acc);
}

TEST(Train, LossDropsWithinTwentyEpochs) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Graph g = sbm(60, 0.2, 0.02, 0.7, 20 + seed, 2 + seed % 2);
    TrainConfig c = small_config(2 + seed);
    c.epochs = 20;
    c.patience = 50;
    c.seed = seed;
    const RunReport r = train(g, c);
    ASSERT_EQ(r.epochs.size(), 20u);
    EXPECT_LT(r.epochs.back().train_loss, r.epochs.front().train_loss) << "seed " << seed;
  }
}

TEST(Train, SameSeedGivesIdenticalReports) {
  const Graph g = sbm(40, 0.3, 0.05, 0.6, 10);
  const TrainConfig c = small_config(3);
  const RunReport a = train(g, c), b = train(g, c);
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    EXPECT_EQ(a.epochs[e].train_loss, b.epochs[e].train_loss);
    EXPECT_EQ(a.epochs[e].val_loss, b.epochs[e].val_loss);
    EXPECT_EQ(a.epochs[e].val_acc, b.epochs[e].val_acc);
  }
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  EXPECT_EQ(a.test_accuracy, b.test_accuracy);
  EXPECT_EQ(a.oversmooth_model, b.oversmooth_model);
  EXPECT_EQ(a.peak_memory_bytes, b.peak_memory_bytes);
}

TEST(Train, ReturnedModelHoldsBestValidationParameters) {
  const Graph g = sbm(40, 0.3, 0.05, 0.6, 11);
  const TrainConfig c = small_config(2);
  DmbaModel m = make_model(g.n_features(), g.n_classes(), c);
  const RunReport r = train(m, g, c);
  EXPECT_EQ(evaluate(m, g, g.masks.test), r.test_accuracy);
  EXPECT_EQ(evaluate(m, g, g.masks.val), r.best_val_acc);
  for (const EpochRecord& e : r.epochs) {
    EXPECT_GE(e.train_acc, 0.0);
    EXPECT_LE(e.val_acc, 1.0);
  }
}

TEST(Train, PatienceStopsEarly) {
  const Graph g = sbm(40, 0.3, 0.05, 0.6, 12);
  TrainConfig c = small_config(2);
  c.epochs = 500;
  c.patience = 5;
  const RunReport r = train(g, c);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(static_cast<int>(r.epochs.size()), r.best_epoch + c.patience);
}

TEST(Train, SingleClassTrainLabelsRejected) {
  Graph g = sbm(30, 0.3, 0.05, 0.5, 13);
  for (std::size_t i = 0; i < g.n_nodes; ++i)
    if (g.masks.train[i]) g.labels[i] = 0;
  EXPECT_THROW(train(g, small_config()), ValidationError);
}

TEST(Train, EmptyTrainMaskRejected) {
  Graph g = sbm(30, 0.3, 0.05, 0.5, 14);
  g.masks.train.assign(30, false);
  EXPECT_THROW(train(g, small_config()), EmptySelectionError);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostic) {
  const Graph g = sbm(30, 0.3, 0.05, 0.5, 15);
  const TrainConfig c = small_config();
  DmbaModel m = make_model(g.n_features(), 2, c);
  m.classifier_w.value[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(m, g, c);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.last_finite_epoch(), 0);
  }
}

TEST(Train, DivergenceMidRunReportsLastFiniteEpoch) {
  const Graph g = sbm(30, 0.3, 0.05, 0.5, 16);
  TrainConfig c = small_config();
  c.lr = 1e200;
  c.weight_decay = 0.0;
  try {
    train(g, c);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.last_finite_epoch(), 1);
  }
}

TEST(TrainConfig, OutOfRangeFieldsRejected) {
  auto bad = [](auto edit) {
    TrainConfig c;
    edit(c);
    EXPECT_THROW(c.validate(), ValidationError);
  };
  bad([](TrainConfig& c) { c.depth = 0; });
  bad([](TrainConfig& c) { c.alpha = 1.5; });
  bad([](TrainConfig& c) { c.beta = -0.1; });
  bad([](TrainConfig& c) { c.dropout = 1.0; });
  bad([](TrainConfig& c) { c.lr = 0.0; });
  bad([](TrainConfig& c) { c.epochs = 0; });
  bad([](TrainConfig& c) { c.d_model = 0; });
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(PlainBaseline, DepthZeroIsFeatureLogisticRegression) {
  const Graph g = sbm(100, 0.1, 0.02, 0.5, 17);
  TrainConfig c = small_config();
  c.epochs = 300;
  const BaselineReport r = train_plain_baseline(g, 0, c);
  EXPECT_NEAR(r.test_accuracy, oracle::logistic_regression_test_acc(g), 0.1);
}

TEST(Sweep, OneByOneEqualsSingleRun) {
  const Graph g = sbm(40, 0.3, 0.05, 0.6, 18);
  TrainConfig c = small_config();
  c.alpha = 0.3;
  c.beta = 0.7;
  const double a[] = {0.3}, b[] = {0.7};
  const SweepResult s = sweep(g, c, a, b);
  ASSERT_EQ(s.cells.size(), 1u);
  EXPECT_EQ(s.cells[0].test_acc, train(g, c).test_accuracy);
}

TEST(Sweep, BestCellDominatesAndThreadsDoNotChangeResults) {
  const Graph g = sbm(40, 0.3, 0.05, 0.6, 19);
  const TrainConfig c = small_config();
  const double a[] = {0.2, 0.8}, b[] = {0.1, 0.5, 0.9};
  const SweepResult one = sweep(g, c, a, b, 1);
  const SweepResult two = sweep(g, c, a, b, 3);
  ASSERT_EQ(one.cells.size(), 6u);
  const auto best = one.best();
  ASSERT_TRUE(best.has_value());
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_GE(*one.cells[*best].test_acc, *one.cells[i].test_acc);
    EXPECT_EQ(one.cells[i].test_acc, two.cells[i].test_acc);
    EXPECT_EQ(one.cells[i].alpha, a[i / 3]);
    EXPECT_EQ(one.cells[i].beta, b[i % 3]);
  }
}

TEST(Sweep, FailingCellIsRecordedAndSweepContinues) {
  const Graph g = sbm(40, 0.3, 0.05, 0.6, 20);
  const double a[] = {0.5, 2.0}, b[] = {0.5};
  const SweepResult s = sweep(g, small_config(), a, b);
  EXPECT_TRUE(s.cells[0].test_acc.has_value());
  EXPECT_FALSE(s.cells[1].test_acc.has_value());
  EXPECT_FALSE(s.cells[1].error.empty());
  EXPECT_EQ(s.best(), 0u);
}

TEST(Sweep, FullGridOnSmallSbmFinishesInTenMinutes) {
  const Graph g = sbm(40, 0.5, 0.02, 0.5, 21);
  TrainConfig c;
  c.seed = 21;
  std::vector<double> grid;
  for (int i = 1; i <= 9; ++i) grid.push_back(i / 10.0);
  const auto t0 = std::chrono::steady_clock::now();
  const SweepResult s = sweep(g, c, grid, grid);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(s.cells.size(), 81u);
  for (const SweepCell& cell : s.cells) EXPECT_TRUE(cell.test_acc.has_value()) << cell.error;
  EXPECT_LT(secs, 600.0);
}

TEST(DepthStudy, DepthZeroRejected) {
  const Graph g = sbm(30, 0.3, 0.05, 0.5, 22);
  const std::size_t depths[] = {2, 0};
  EXPECT_THROW(depth_study(g, depths, small_config()), ValidationError);
}

TEST(DepthStudy, PlainMetricStrictlyDecreasesWithDepth) {
  SbmSpec s;
  s.n_nodes = 80;
  s.blocks = 2;
  s.p_in = 0.2;
  s.p_out = 0.05;
  s.center_features = true;
  s.seed = 23;
  Graph g = generate_sbm(s);
  g.masks = make_splits(g, {});
  TrainConfig c = small_config();
  c.epochs = 5;
  const std::size_t depths[] = {1, 2, 4, 8, 16};
  const auto rows = depth_study(g, depths, c);
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].depth, depths[i]);
    EXPECT_TRUE(rows[i].test_acc.has_value()) << rows[i].error;
    EXPECT_TRUE(rows[i].plain_test_acc.has_value());
    if (i) EXPECT_LT(rows[i].oversmooth_plain, rows[i - 1].oversmooth_plain);
  }
}
