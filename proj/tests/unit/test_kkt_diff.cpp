#include <gtest/gtest.h>

#include <random>

#include <Eigen/Eigenvalues>

#include "opf_resid/acopf_models.hpp"
#include "opf_resid/kkt_diff.hpp"
#include "unit/test_util.hpp"

using namespace opf_resid;

namespace {

SpMat sparse(const Eigen::MatrixXd& m) { return m.sparseView(); }

NlpOptions tight() {
  NlpOptions opt;
  opt.kkt_tol = 1e-11;
  opt.mu_min = 1e-13;
  return opt;
}

/// min (u - y)^2, optionally with u <= 0.
QuadraticProblem tracking(double y, bool capped) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Ones(capped ? 1 : 0, 1);
  return QuadraticProblem(sparse(Eigen::MatrixXd::Constant(1, 1, 2.0)),
                          Eigen::VectorXd::Zero(1), SpMat(0, 1), Eigen::VectorXd(0),
                          sparse(g), Eigen::VectorXd::Zero(capped ? 1 : 0),
                          sparse(Eigen::MatrixXd::Constant(1, 1, -2.0)),
                          Eigen::VectorXd::Constant(1, y));
}

struct EqQp {
  Eigen::MatrixXd q_lower, a, p;
  Eigen::VectorXd c, b;

  QuadraticProblem at(const Eigen::VectorXd& params) const {
    return QuadraticProblem(sparse(q_lower), c, sparse(a), b, SpMat(0, 3), Eigen::VectorXd(0),
                            sparse(p), params);
  }
};

EqQp random_eq_qp() {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(3, 3);
  for (int i = 0; i < 9; ++i) {
    m.data()[i] = n(rng);
  }
  EqQp qp;
  qp.q_lower = (m.transpose() * m + Eigen::MatrixXd::Identity(3, 3))
                   .triangularView<Eigen::Lower>();
  qp.a = Eigen::MatrixXd(1, 3);
  qp.a << 1.0, 2.0, -1.0;
  qp.b = Eigen::VectorXd::Constant(1, 0.5);
  qp.c = Eigen::VectorXd(3);
  qp.c << 0.3, -0.2, 1.0;
  qp.p = Eigen::MatrixXd(3, 2);
  for (int i = 0; i < 6; ++i) {
    qp.p.data()[i] = n(rng);
  }
  return qp;
}

}  // namespace

TEST(KktDiff, TrackingProblemHasUnitSensitivity) {
  const QuadraticProblem p = tracking(0.7, false);
  const NlpSolution sol = solve(p, std::nullopt, tight());
  ASSERT_EQ(sol.status, NlpStatus::optimal);
  const KktSolver k(assemble_kkt(p, sol));
  EXPECT_NEAR(k.sensitivity()(0, 0), 1.0, 1e-8);
  EXPECT_NEAR(backward(p, sol, Eigen::VectorXd::Ones(1))(0), 1.0, 1e-8);
}

TEST(KktDiff, PinnedBoundHasZeroSensitivity) {
  const QuadraticProblem p = tracking(1.0, true);
  const NlpSolution sol = solve(p, std::nullopt, tight());
  ASSERT_EQ(sol.status, NlpStatus::optimal);
  EXPECT_NEAR(sol.u(0), 0.0, 1e-8);
  const KktSolver k(assemble_kkt(p, sol));
  EXPECT_NEAR(k.sensitivity()(0, 0), 0.0, 1e-6);
}

TEST(KktDiff, EqualityQpMatchesFiniteDifferences) {
  const EqQp qp = random_eq_qp();
  Eigen::VectorXd params(2);
  params << 0.4, -0.3;
  const QuadraticProblem p = qp.at(params);
  const NlpSolution sol = solve(p, std::nullopt, tight());
  ASSERT_EQ(sol.status, NlpStatus::optimal);
  const Eigen::MatrixXd du = KktSolver(assemble_kkt(p, sol)).sensitivity();
  const double h = 1e-5;
  for (int j = 0; j < 2; ++j) {
    Eigen::VectorXd hi = params, lo = params;
    hi(j) += h;
    lo(j) -= h;
    const Eigen::VectorXd fd = (solve(qp.at(hi), std::nullopt, tight()).u -
                                solve(qp.at(lo), std::nullopt, tight()).u) /
                               (2 * h);
    EXPECT_LT((du.col(j) - fd).cwiseAbs().maxCoeff(), 1e-5) << "param " << j;
  }
  // Feasibility is independent of p, so every column stays in null(A).
  EXPECT_LT((qp.a * du).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(KktDiff, ZeroUpstreamGivesZeroGradient) {
  const EqQp qp = random_eq_qp();
  const QuadraticProblem p = qp.at(Eigen::VectorXd::Zero(2));
  const NlpSolution sol = solve(p, std::nullopt, tight());
  EXPECT_EQ(backward(p, sol, Eigen::VectorXd::Zero(3)).norm(), 0.0);
}

TEST(KktDiff, AdjointMatchesForwardOnRestoration) {
  const GridCase g = opf_test::load_case("case9");
  const SetpointLayout layout = SetpointLayout::from(g);
  Setpoints y = Setpoints::from_case(g, layout);
  y.pg *= 1.1;
  const AcOpfProblem p = build_restoration(g, y, Weights::training());
  NlpOptions opt;
  opt.kkt_tol = 1e-10;
  const NlpSolution sol = solve(p, std::nullopt, opt);
  ASSERT_EQ(sol.status, NlpStatus::optimal);
  const KktSolver k(assemble_kkt(p, sol));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  Eigen::VectorXd gu(p.num_vars()), d(p.num_params());
  for (Eigen::Index i = 0; i < gu.size(); ++i) {
    gu(i) = n(rng);
  }
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    d(i) = n(rng);
  }
  const double lhs = k.backward(gu).dot(d);
  const double rhs = gu.dot(k.forward(d));
  EXPECT_NEAR(lhs, rhs, 1e-8 * std::max(1.0, std::abs(rhs)));
}

TEST(KktDiff, MaskedWeightsGiveZeroRows) {
  // Without a Pg tracking term the solution does not depend on the Pg targets.
  const GridCase g = opf_test::load_case("case9");
  const SetpointLayout layout = SetpointLayout::from(g);
  const AcOpfProblem p =
      build_restoration(g, Setpoints::from_case(g, layout), Weights::voltage_only());
  NlpOptions opt;
  opt.kkt_tol = 1e-10;
  const NlpSolution sol = solve(p, std::nullopt, opt);
  ASSERT_EQ(sol.status, NlpStatus::optimal);
  const Eigen::MatrixXd du = KktSolver(assemble_kkt(p, sol)).sensitivity();
  EXPECT_LT(du.leftCols(layout.num_pg()).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_GT(du.rightCols(layout.num_vg() + 1).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(KktDiff, ProjectionJacobianIsContractive) {
  const GridCase g = opf_test::load_case("case14");
  const SetpointLayout layout = SetpointLayout::from(g);
  NlpOptions opt;
  opt.kkt_tol = 1e-10;
  const Setpoints y = solve_acopf(g, opt).opf.y;
  const AcOpfProblem p = build_restoration(g, y, Weights::closest_feasible());
  const NlpSolution sol = solve(p, std::nullopt, opt);
  ASSERT_EQ(sol.status, NlpStatus::optimal);
  const Eigen::MatrixXd du = KktSolver(assemble_kkt(p, sol)).sensitivity();
  const int npg = layout.num_pg();
  Eigen::MatrixXd block(npg, npg);
  for (int r = 0; r < npg; ++r) {
    block.row(r) = du.row(p.index().pg + layout.pg_gens[r]).leftCols(npg);
  }
  const Eigen::VectorXcd eig = Eigen::EigenSolver<Eigen::MatrixXd>(block).eigenvalues();
  for (const auto& e : eig) {
    EXPECT_NEAR(e.imag(), 0.0, 1e-6);
    EXPECT_GE(e.real(), -1e-6);
    EXPECT_LE(e.real(), 1.0 + 1e-6);
  }
}
