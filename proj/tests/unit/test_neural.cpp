#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "opf_resid/error.hpp"
#include "opf_resid/neural.hpp"
#include "unit/test_util.hpp"

using namespace opf_resid;

namespace {

OutputBounds small_bounds(int nv, int np) {
  OutputBounds b;
  b.v_lo = Eigen::VectorXd::Constant(nv, 0.9);
  b.v_hi = Eigen::VectorXd::Constant(nv, 1.1);
  b.p_lo = Eigen::VectorXd::Constant(np, -50.0);
  b.p_hi = Eigen::VectorXd::Constant(np, 50.0);
  return b;
}

Eigen::VectorXd random_vector(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i) = normal(rng);
  }
  return x;
}

}  // namespace

TEST(Neural, LinProjMapsTheUnitInterval) {
  EXPECT_DOUBLE_EQ(lin_proj(-1.0, 0.94, 1.06), 0.94);
  EXPECT_DOUBLE_EQ(lin_proj(1.0, 0.94, 1.06), 1.06);
  EXPECT_DOUBLE_EQ(lin_proj(0.0, 0.94, 1.06), 1.0);
  EXPECT_DOUBLE_EQ(lin_proj(0.5, 0.0, 2.0), 1.5);
}

TEST(Neural, ZeroNetworkGivesMidpointsAndDcDispatch) {
  const GridCase g = opf_test::load_case("case30");
  const SetpointLayout layout = SetpointLayout::from(g);
  const OutputBounds bounds = OutputBounds::from(g, layout);
  const MlpParams params(network_dims(g, layout, {16, 16}));
  Eigen::VectorXd pg_dc(layout.num_pg());
  for (int j = 0; j < layout.num_pg(); ++j) {
    pg_dc(j) = 0.5 * (bounds.p_lo(j) + bounds.p_hi(j));
  }
  const NetOutput out = forward(params, bounds, random_vector(params.input_dim(), 2), pg_dc);
  EXPECT_LT((out.y.voltages() - 0.5 * (bounds.v_lo + bounds.v_hi)).cwiseAbs().maxCoeff(),
            1e-15);
  EXPECT_EQ(out.y.pg, pg_dc);
}

TEST(Neural, ClipSaturatesAtTheUpperBound) {
  MlpParams params({1, 2});
  params.bias(0) << 0.0, 0.5;
  OutputBounds b = small_bounds(1, 1);
  b.p_lo(0) = 0.0;
  b.p_hi(0) = 1.2;
  const NetOutput out =
      forward(params, b, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Constant(1, 1.0));
  EXPECT_DOUBLE_EQ(out.y.pg(0), 1.2);
  EXPECT_EQ(out.trace.clip[0], ClipSide::upper);
  EXPECT_DOUBLE_EQ(out.y.vref, 1.0);

  const Eigen::VectorXd d_pg = Eigen::VectorXd::Ones(1);
  const Eigen::VectorXd d_v = Eigen::VectorXd::Zero(1);
  // Layout: W (2x1), then b (2).
  const Eigen::VectorXd g0 = backward(params, b, out.trace, d_pg, d_v, ClipGradient::zero);
  EXPECT_EQ(g0.norm(), 0.0);
  const Eigen::VectorXd g1 =
      backward(params, b, out.trace, d_pg, d_v, ClipGradient::straight_through);
  EXPECT_DOUBLE_EQ(g1(3), 1.0);
  EXPECT_DOUBLE_EQ(g1(1), 1.0);
}

TEST(Neural, SingleLinearLayer) {
  MlpParams params({2, 2});
  params.weight(0) << 1.0, 2.0, 3.0, 4.0;
  params.bias(0) << 0.1, -0.2;
  Eigen::VectorXd x(2);
  x << 0.1, 0.2;
  const OutputBounds b = small_bounds(1, 1);
  const NetOutput out = forward(params, b, x, Eigen::VectorXd::Constant(1, 2.0));
  const double o0 = 1.0 * 0.1 + 2.0 * 0.2 + 0.1;
  const double o1 = 3.0 * 0.1 + 4.0 * 0.2 - 0.2;
  EXPECT_NEAR(out.y.vref, 1.0 + 0.1 * std::tanh(o0), 1e-15);
  EXPECT_NEAR(out.y.pg(0), 2.0 + o1, 1e-15);
}

TEST(Neural, BackwardMatchesFiniteDifferences) {
  const int nv = 2, np = 2;
  MlpParams params = MlpParams::he_uniform({3, 6, 5, nv + np}, 9, 1.0);
  const OutputBounds b = small_bounds(nv, np);
  const Eigen::VectorXd x = random_vector(3, 3);
  const Eigen::VectorXd pg_dc = Eigen::VectorXd::Constant(np, 1.0);
  const Eigen::VectorXd a_pg = random_vector(np, 4);
  const Eigen::VectorXd a_v = random_vector(nv, 5);
  auto loss = [&](const MlpParams& p) {
    const NetOutput o = forward(p, b, x, pg_dc);
    return a_pg.dot(o.y.pg) + a_v.dot(o.y.voltages());
  };
  const NetOutput out = forward(params, b, x, pg_dc);
  const Eigen::VectorXd grad = backward(params, b, out.trace, a_pg, a_v);
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    MlpParams hi = params, lo = params;
    hi.values()(i) += h;
    lo.values()(i) -= h;
    const double fd = (loss(hi) - loss(lo)) / (2 * h);
    worst = std::max(worst, std::abs(grad(i) - fd) / std::max(1.0, std::abs(fd)));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Neural, Case118OutputsStayInsideBounds) {
  const GridCase g = opf_test::load_case("case118");
  const SetpointLayout layout = SetpointLayout::from(g);
  const OutputBounds b = OutputBounds::from(g, layout);
  const MlpParams params = MlpParams::he_uniform(network_dims(g, layout, {64, 64}), 3, 5.0);
  for (std::uint64_t s = 0; s < 5; ++s) {
    Eigen::VectorXd pg_dc = 0.5 * (b.p_lo + b.p_hi);
    const NetOutput out = forward(params, b, 3.0 * random_vector(params.input_dim(), s), pg_dc);
    EXPECT_TRUE(((out.y.pg - b.p_lo).array() >= 0.0).all());
    EXPECT_TRUE(((out.y.pg - b.p_hi).array() <= 0.0).all());
    EXPECT_TRUE(((out.y.voltages() - b.v_lo).array() >= 0.0).all());
    EXPECT_TRUE(((out.y.voltages() - b.v_hi).array() <= 0.0).all());
  }
}

TEST(Neural, HeUniformIsDeterministic) {
  const std::vector<int> dims = {4, 8, 3};
  EXPECT_EQ(MlpParams::he_uniform(dims, 5).values(), MlpParams::he_uniform(dims, 5).values());
  EXPECT_NE(MlpParams::he_uniform(dims, 5).values(), MlpParams::he_uniform(dims, 6).values());
  const MlpParams p = MlpParams::he_uniform(dims, 5, 0.01);
  const double bound = std::sqrt(6.0 / 4.0);
  EXPECT_LE(p.weight(0).cwiseAbs().maxCoeff(), bound);
  EXPECT_LE(p.weight(1).cwiseAbs().maxCoeff(), 0.01 * std::sqrt(6.0 / 8.0));
  EXPECT_EQ(p.bias(0).norm(), 0.0);
}

TEST(Adam, FirstStepHasLearningRateSize) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd grad(3);
  grad << 2.0, -0.5, 1e-3;
  AdamState st(3);
  adam_step(theta, grad, st, 0.01);
  EXPECT_NEAR(theta(0), -0.01, 1e-8);
  EXPECT_NEAR(theta(1), 0.01, 1e-8);
  EXPECT_NEAR(theta(2), -0.01, 1e-7);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Eigen::VectorXd theta = random_vector(4, 1);
  const Eigen::VectorXd before = theta;
  AdamState st(4);
  adam_step(theta, Eigen::VectorXd::Zero(4), st, 0.1);
  EXPECT_EQ(theta, before);
}

TEST(Adam, MinimizesQuadratic) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(1);
  AdamState st(1);
  for (int i = 0; i < 100; ++i) {
    adam_step(w, 2.0 * (w.array() - 3.0).matrix(), st, 0.1);
  }
  EXPECT_NEAR(w(0), 3.0, 0.05);
}

TEST(Checkpoint, RoundTripsExactly) {
  Checkpoint c;
  c.params = MlpParams::he_uniform({5, 7, 3}, 12);
  c.case_name = "case9";
  c.clip_gradient = ClipGradient::straight_through;
  c.epoch = 17;
  const auto path = std::filesystem::temp_directory_path() / "opf_resid_ckpt_test.json";
  save_checkpoint(c, path.string());
  const Checkpoint back = load_checkpoint(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back.params.dims(), c.params.dims());
  EXPECT_EQ(back.params.values(), c.params.values());
  EXPECT_EQ(back.case_name, "case9");
  EXPECT_EQ(back.clip_gradient, ClipGradient::straight_through);
  EXPECT_EQ(back.epoch, 17);
}

TEST(Checkpoint, RejectsMalformedInput) {
  nlohmann::json j = checkpoint_to_json({MlpParams::he_uniform({2, 2}, 1), "x"});
  j["format"] = "other";
  EXPECT_THROW(checkpoint_from_json(j), Error);
  EXPECT_THROW(clip_gradient_from_string("bogus"), ValidationError);
}

TEST(Checkpoint, CompatibilityWithCase) {
  const GridCase g = opf_test::load_case("case9");
  const SetpointLayout layout = SetpointLayout::from(g);
  EXPECT_NO_THROW(check_compatible(MlpParams(network_dims(g, layout, {4})), g, layout));
  const GridCase other = opf_test::load_case("case14");
  const SetpointLayout other_layout = SetpointLayout::from(other);
  EXPECT_THROW(check_compatible(MlpParams(network_dims(other, other_layout, {4})), g, layout),
               ValidationError);
}
