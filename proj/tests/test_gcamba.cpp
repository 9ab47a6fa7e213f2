#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dmba/errors.hpp"
#include "dmba/gcamba.hpp"
#include "oracles.hpp"

using namespace dmba;

namespace {

double silu(double v) { return v / (1.0 + std::exp(-v)); }

Tensor run(GcambaLayer& layer, const Tensor& x) {
  Tape tape;
  return gcamba_forward(tape, layer, x).value();
}

// All-steps block output f(F) written out with the unrolled kernel sum.
Tensor block_oracle(const SsmBlock& block, const Tensor& seq) {
  const ScanInputs in = scan_inputs(block, seq);
  Tensor p(block.a_log.value.shape());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = -std::exp(block.a_log.value[i]);
  Tensor pb, qb;
  oracle::discretize_series(p, in.q, in.delta, pb, qb);
  const Tensor y = oracle::kernel_scan(pb, qb, in.r, in.x);
  Tensor gated(y.shape());
  for (std::size_t t = 0; t < y.rows(); ++t)
    for (std::size_t c = 0; c < y.cols(); ++c)
      gated(t, c) = (y(t, c) + block.d_skip.value[c] * in.x(t, c)) * silu(in.z(t, c));
  return oracle::dense_matmul(gated, block.w_out.value);
}

Tensor reversed_rows(const Tensor& x) {
  Tensor r(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) r(x.rows() - 1 - i, c) = x(i, c);
  return r;
}

GcambaLayer lively_layer(std::size_t d, std::size_t dm, std::size_t ds, double beta, std::uint64_t seed) {
  GcambaLayer layer = make_gcamba(d, dm, ds, beta, seed);
  // Larger steps than the init range so every gate is clearly active.
  for (double& v : layer.block.b_delta.value.data()) v = 0.4;
  return layer;
}

}  // namespace

TEST(NodeSequence, SingleNodeGivesSingleRow) {
  GcambaLayer layer = make_gcamba(3, 4, 2, 0.5, 1);
  Tape tape;
  const Tensor f = build_node_sequence(tape, layer, Tensor::from_rows({{1, 2, 3}})).value();
  EXPECT_EQ(f.rows(), 1u);
  EXPECT_EQ(f.cols(), 4u);
}

TEST(NodeSequence, RowIsProjectionOfFeatureRow) {
  std::mt19937_64 rng(2);
  const Tensor x = oracle::random_tensor(9, 5, rng);
  GcambaLayer layer = make_gcamba(5, 3, 2, 0.5, 2);
  Tape tape;
  const Tensor f = build_node_sequence(tape, layer, x).value();
  EXPECT_LT(max_abs_diff(f, oracle::dense_matmul(x, layer.input_proj.value)), 1e-14);
}

TEST(NodeSequence, PermutedGraphPermutesSequence) {
  std::mt19937_64 rng(3);
  const Graph g = oracle::random_graph(11, 4, 0.3, rng);
  std::vector<std::size_t> perm(11);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Graph h = relabel(g, perm);
  GcambaLayer layer = make_gcamba(4, 3, 2, 0.5, 3);
  Tape tape;
  const Tensor fg = build_node_sequence(tape, layer, g.features).value();
  const Tensor fh = build_node_sequence(tape, layer, h.features).value();
  for (std::size_t i = 0; i < 11; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(fg(i, c), fh(perm[i], c));
}

TEST(NodeSequence, WidthMismatchThrows) {
  GcambaLayer layer = make_gcamba(3, 4, 2, 0.5, 1);
  Tape tape;
  EXPECT_THROW(build_node_sequence(tape, layer, Tensor({2, 4})), DimensionError);
}

TEST(Gcamba, BetaOneReturnsProjectedFeaturesExactly) {
  std::mt19937_64 rng(4);
  const Tensor x = oracle::random_tensor(8, 5, rng);
  GcambaLayer layer = make_gcamba(5, 4, 3, 1.0, 4);
  Tape tape;
  const Tensor f = build_node_sequence(tape, layer, x).value();
  EXPECT_EQ(run(layer, x), f);
}

TEST(Gcamba, SingleNodeWithBetaZeroDoublesTheBlockOutput) {
  GcambaLayer layer = lively_layer(3, 4, 3, 0.0, 5);
  const Tensor x = Tensor::from_rows({{0.7, -1.2, 2.0}});
  Tape tape;
  const Tensor f = build_node_sequence(tape, layer, x).value();
  const Tensor once = selective_scan(tape, layer.block, tape.constant(f)).out.value();
  const Tensor got = run(layer, x);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(got(0, c), 2.0 * once(0, c));
}

TEST(Gcamba, ForwardDirectionMatchesKernelOracle) {
  std::mt19937_64 rng(6);
  const Graph g = oracle::random_graph(10, 5, 0.3, rng);
  GcambaLayer layer = lively_layer(5, 4, 3, 0.0, 6);
  layer.bidirectional = false;
  const Tensor f = oracle::dense_matmul(g.features, layer.input_proj.value);
  EXPECT_LT(max_abs_diff(run(layer, g.features), block_oracle(layer.block, f)), 1e-10);
}

TEST(Gcamba, BidirectionalOutputMatchesKernelOracle) {
  std::mt19937_64 rng(7);
  const Graph g = oracle::random_graph(10, 5, 0.3, rng);
  const double beta = 0.3;
  GcambaLayer layer = lively_layer(5, 4, 3, beta, 7);
  const Tensor f = oracle::dense_matmul(g.features, layer.input_proj.value);
  const Tensor fwd = block_oracle(layer.block, f);
  const Tensor bwd = reversed_rows(block_oracle(layer.block, reversed_rows(f)));
  Tensor want(f.shape());
  for (std::size_t i = 0; i < want.size(); ++i) want[i] = (1 - beta) * (fwd[i] + bwd[i]) + beta * f[i];
  EXPECT_LT(max_abs_diff(run(layer, g.features), want), 1e-10);
}

TEST(Gcamba, ReversalEquivarianceHoldsOnRandomGraphs) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial, d = 2 + trial % 4;
    const Graph g = oracle::random_graph(n, d, 0.3, rng);
    GcambaLayer layer = lively_layer(d, 1 + trial % 4, 1 + trial % 3, 0.25 * (trial % 4), 80 + trial);
    EXPECT_TRUE(reversal_equivariance_check(layer, g)) << "trial " << trial;
  }
}

TEST(Gcamba, ForwardOnlyAblationBreaksReversalEquivariance) {
  std::mt19937_64 rng(9);
  int violations = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = oracle::random_graph(6 + trial, 3, 0.3, rng);
    GcambaLayer layer = lively_layer(3, 4, 2, 0.5, 90 + trial);
    layer.bidirectional = false;
    if (!reversal_equivariance_check(layer, g)) ++violations;
  }
  EXPECT_GE(violations, 1);
}

TEST(Gcamba, SingleNodeIsTriviallyEquivariant) {
  std::mt19937_64 rng(10);
  const Graph g = oracle::random_graph(1, 3, 0.5, rng);
  GcambaLayer layer = lively_layer(3, 4, 2, 0.5, 10);
  layer.bidirectional = false;
  EXPECT_TRUE(reversal_equivariance_check(layer, g));
}

TEST(Gcamba, EveryNodeReachesEveryOtherNode) {
  std::mt19937_64 rng(11);
  const Tensor x = oracle::random_tensor(10, 4, rng);
  GcambaLayer layer = lively_layer(4, 4, 3, 0.5, 11);
  for (double& v : layer.block.a_log.value.data()) v = std::log(0.3);
  const Tensor base = run(layer, x);
  const double h = 1e-6;
  for (std::size_t j = 0; j < 10; ++j) {
    Tensor xp = x, xm = x;
    for (std::size_t c = 0; c < 4; ++c) {
      xp(j, c) += h;
      xm(j, c) -= h;
    }
    const Tensor yp = run(layer, xp), ym = run(layer, xm);
    for (std::size_t i = 0; i < 10; ++i) {
      double jac = 0.0;
      for (std::size_t c = 0; c < 4; ++c) jac += std::abs(yp(i, c) - ym(i, c)) / (2 * h);
      EXPECT_GT(jac, 1e-9) << "node " << i << " ignores node " << j;
    }
  }
}

TEST(Gcamba, OutputIsAffineInBeta) {
  std::mt19937_64 rng(12);
  const Tensor x = oracle::random_tensor(7, 3, rng);
  GcambaLayer layer = lively_layer(3, 4, 2, 0.0, 12);
  const Tensor at0 = run(layer, x);
  layer.beta = 1.0;
  const Tensor at1 = run(layer, x);
  for (double beta : {0.1, 0.35, 0.8}) {
    layer.beta = beta;
    const Tensor got = run(layer, x);
    Tensor want(got.shape());
    for (std::size_t i = 0; i < want.size(); ++i) want[i] = (1 - beta) * at0[i] + beta * at1[i];
    EXPECT_LT(max_abs_diff(got, want), 1e-12) << "beta " << beta;
  }
}

TEST(Gcamba, UntiedDirectionsAddAParameterSet) {
  GcambaLayer tied = make_gcamba(3, 4, 2, 0.5, 13);
  GcambaLayer untied = make_gcamba(3, 4, 2, 0.5, 13, true);
  EXPECT_EQ(untied.parameters().size(), 2 * tied.parameters().size() - 1);
}

TEST(Gcamba, BetaOutsideUnitIntervalRejected) {
  EXPECT_THROW(make_gcamba(3, 4, 2, -0.1, 1), ValidationError);
  EXPECT_THROW(make_gcamba(3, 4, 2, 1.5, 1), ValidationError);
}
