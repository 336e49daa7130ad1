#include <gtest/gtest.h>

#include <cmath>

#include "opf_resid/error.hpp"
#include "opf_resid/evalkit.hpp"
#include "unit/test_util.hpp"

using namespace opf_resid;

namespace {

std::vector<Sample> case9_samples(int n) {
  DatasetOptions opt;
  opt.count = n;
  opt.seed = 11;
  return generate_dataset(opf_test::load_case("case9"), opt);
}

}  // namespace

TEST(Violation, ElementwiseArithmetic) {
  Eigen::VectorXd x(3), lo = Eigen::VectorXd::Zero(3), hi = Eigen::VectorXd::Constant(3, 2.0);
  x << -0.1, 0.5, 2.3;
  const Violation v = violation(x, lo, hi);
  EXPECT_NEAR(v.l(0), 0.1, 1e-15);
  EXPECT_EQ(v.l(1), 0.0);
  EXPECT_NEAR(v.l(2), 0.3, 1e-15);
  EXPECT_NEAR(v.max, 0.3, 1e-15);
  EXPECT_NEAR(v.mean, 0.4 / 3.0, 1e-15);
  EXPECT_EQ(violation(Eigen::VectorXd(0), Eigen::VectorXd(0), Eigen::VectorXd(0)).max, 0.0);
}

TEST(Violation, GroupsOfATwoBusState) {
  const GridCase g = parse_matpower_case(opf_test::kTwoBusCase);
  Eigen::VectorXd v(2), th(2), pg(1), qg(1);
  v << 1.1, 1.0;
  th << 0.0, -0.1;
  pg << 3.5;
  qg << 0.0;
  const ViolationReport r = state_violation(g, pg, qg, v, compute_branch_flows(g, v, th));
  EXPECT_NEAR(r.v.max, 0.04, 1e-12);
  EXPECT_NEAR(r.v.mean, 0.02, 1e-12);
  EXPECT_EQ(r.v.count, 2);
  EXPECT_NEAR(r.p_gr.max, 0.5, 1e-12);
  EXPECT_EQ(r.q_gr.max, 0.0);
  EXPECT_EQ(r.s2.count, 0);
  EXPECT_NEAR(r.combined.max, 0.5, 1e-12);
  EXPECT_EQ(r.combined.count, 4);
}

TEST(Gap, Examples) {
  EXPECT_NEAR(optimality_gap(101.0, 100.0), 1.0, 1e-12);
  EXPECT_NEAR(optimality_gap(99.0, 100.0), -1.0, 1e-12);
  EXPECT_EQ(optimality_gap(5.0, 5.0), 0.0);
  EXPECT_THROW(optimality_gap(1.0, 0.0), ValidationError);
  const GridCase g = parse_matpower_case(opf_test::kTwoBusCase);
  EXPECT_NEAR(dispatch_cost(g, Eigen::VectorXd::Ones(1)), 1105.0, 1e-9);
}

TEST(ClosestFeasible, OptimumIsAFixedPoint) {
  const GridCase g = opf_test::load_case("case9");
  NlpOptions tight;
  tight.kkt_tol = 1e-10;
  const SolvedModel opt = solve_acopf(g, tight);
  RestorationOptions ro;
  ro.nlp = tight;
  const ClosestFeasible c = closest_feasible(g, opt.opf.y, ro);
  EXPECT_LT(c.pg_distance, 1e-5);
  EXPECT_LT(c.v_distance, 1e-5);
}

TEST(ClosestFeasible, InfeasibleSetpointsHavePositiveDistance) {
  const GridCase g = opf_test::load_case("case9");
  const SetpointLayout layout = SetpointLayout::from(g);
  Setpoints y = Setpoints::from_case(g, layout);
  y.vg.setConstant(1.2);
  const ClosestFeasible c = closest_feasible(g, y);
  EXPECT_GT(c.v_distance, 0.05);
  EXPECT_GT(c.mean_abs_v, 0.0);
  EXPECT_LE(c.solution.v.maxCoeff(), 1.1 + 1e-6);
}

TEST(Pipeline, ZeroNetworkInBothModes) {
  const GridCase g = opf_test::load_case("case9");
  const SetpointLayout layout = SetpointLayout::from(g);
  const MlpParams params(network_dims(g, layout, {8}));
  const std::vector<Sample> samples = case9_samples(3);
  EvalOptions opt;
  opt.timing_repeats = 1;
  const std::vector<Baseline> base = solve_baselines(g, samples, opt);
  ASSERT_EQ(base.size(), 3u);

  const EvalSummary r = evaluate_restoration_mode(g, params, samples, opt, &base);
  EXPECT_EQ(r.samples, 3);
  EXPECT_EQ(r.failures, 0);
  EXPECT_LE(r.combined.max_of_max, 1e-6);
  EXPECT_TRUE(std::isfinite(r.mean_gap));
  EXPECT_GT(r.median_seconds, 0.0);

  const EvalSummary p = evaluate_pf_mode(g, params, samples, opt, &base);
  EXPECT_EQ(p.samples, 3);
  EXPECT_EQ(p.per_sample.size(), 3u);
  EXPECT_GE(p.combined.max_of_max, p.combined.mean_of_max);
  EXPECT_GE(p.combined.mean_of_max, p.combined.mean_of_mean);
  EXPECT_LT(p.max_balance_mismatch, 1e-6);
  EXPECT_GT(p.time_ratio, 0.0);

  const nlohmann::json j = to_json(p, true);
  EXPECT_EQ(j.at("mode"), "pf");
  EXPECT_EQ(j.at("per_sample").size(), 3u);
  EXPECT_NE(format_table(p).find("P_gr"), std::string::npos);
}

TEST(Contingency, RetentionIsAFraction) {
  const GridCase g = opf_test::load_case("case9");
  const SetpointLayout layout = SetpointLayout::from(g);
  const MlpParams params(network_dims(g, layout, {8}));
  std::vector<int> branches(g.num_branches());
  for (int l = 0; l < g.num_branches(); ++l) {
    branches[l] = l;
  }
  const ContingencyReport r = contingency_sweep(g, params, case9_samples(2), branches);
  ASSERT_EQ(r.outages.size(), branches.size());
  // Each generator sits behind a single transformer.
  EXPECT_EQ(r.islanding, 3);
  EXPECT_GE(r.outage_retention, 0.0);
  EXPECT_LE(r.outage_retention, 1.0);
  EXPECT_GE(r.pair_retention, 0.0);
  EXPECT_LE(r.pair_retention, 1.0);
  for (const OutageResult& o : r.outages) {
    EXPECT_EQ(o.retained, !o.islanding && o.valid > 0);
  }
}
