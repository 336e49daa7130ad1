#include <gtest/gtest.h>

#include <random>

#include <Eigen/Dense>

#include "opf_resid/acopf_models.hpp"
#include "opf_resid/ipm_nlp.hpp"
#include "unit/test_util.hpp"

using namespace opf_resid;

namespace {

SpMat sparse(const Eigen::MatrixXd& m) { return m.sparseView(); }

/// min (x - 2)^2 s.t. x <= 1, as 1/2 (2) x^2 - 4x.
QuadraticProblem bound_example() {
  return QuadraticProblem(sparse(Eigen::MatrixXd::Constant(1, 1, 2.0)),
                          Eigen::VectorXd::Constant(1, -4.0), SpMat(0, 1),
                          Eigen::VectorXd(0), sparse(Eigen::MatrixXd::Ones(1, 1)),
                          Eigen::VectorXd::Ones(1));
}

/// Box-constrained QP solved by enumerating every active set.
Eigen::VectorXd brute_force_box_qp(const Eigen::MatrixXd& q, const Eigen::VectorXd& c,
                                   const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  const int n = static_cast<int>(c.size());
  int combos = 1;
  for (int i = 0; i < n; ++i) {
    combos *= 3;
  }
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x;
  for (int code = 0; code < combos; ++code) {
    std::vector<int> state(n);
    int rest = code;
    for (int i = 0; i < n; ++i) {
      state[i] = rest % 3;
      rest /= 3;
    }
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<int> free;
    for (int i = 0; i < n; ++i) {
      if (state[i] == 1) {
        x(i) = lo(i);
      } else if (state[i] == 2) {
        x(i) = hi(i);
      } else {
        free.push_back(i);
      }
    }
    if (!free.empty()) {
      const int m = static_cast<int>(free.size());
      Eigen::MatrixXd qf(m, m);
      Eigen::VectorXd rhs(m);
      for (int a = 0; a < m; ++a) {
        rhs(a) = -c(free[a]);
        for (int j = 0; j < n; ++j) {
          if (state[j] != 0) {
            rhs(a) -= q(free[a], j) * x(j);
          }
        }
        for (int b = 0; b < m; ++b) {
          qf(a, b) = q(free[a], free[b]);
        }
      }
      const Eigen::VectorXd xf = qf.ldlt().solve(rhs);
      for (int a = 0; a < m; ++a) {
        x(free[a]) = xf(a);
      }
    }
    if (((x - lo).array() < -1e-12).any() || ((x - hi).array() > 1e-12).any()) {
      continue;
    }
    const double f = 0.5 * x.dot(q * x) + c.dot(x);
    if (f < best) {
      best = f;
      best_x = x;
    }
  }
  return best_x;
}

}  // namespace

TEST(Ipm, ActiveBoundMultiplier) {
  const QuadraticProblem p = bound_example();
  const NlpSolution sol = solve(p);
  ASSERT_EQ(sol.status, NlpStatus::optimal);
  EXPECT_NEAR(sol.u(0), 1.0, 1e-6);
  EXPECT_NEAR(sol.nu(0), 2.0, 1e-5);
  EXPECT_LE(kkt_residual(p, sol), NlpOptions{}.kkt_tol);
}

TEST(Ipm, EqualityMultiplier) {
  const QuadraticProblem p(sparse(Eigen::MatrixXd::Constant(1, 1, 2.0)),
                           Eigen::VectorXd::Zero(1), sparse(Eigen::MatrixXd::Ones(1, 1)),
                           Eigen::VectorXd::Constant(1, 3.0), SpMat(0, 1),
                           Eigen::VectorXd(0));
  const NlpSolution sol = solve(p);
  ASSERT_EQ(sol.status, NlpStatus::optimal);
  EXPECT_NEAR(sol.u(0), 3.0, 1e-8);
  EXPECT_NEAR(sol.lambda(0), -6.0, 1e-6);
}

TEST(Ipm, RandomBoxQpMatchesActiveSetEnumeration) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 5;
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n * n; ++i) {
      a.data()[i] = normal(rng);
    }
    const Eigen::MatrixXd q = a.transpose() * a + 0.1 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd c(n), lo(n), hi(n);
    for (int i = 0; i < n; ++i) {
      c(i) = 3.0 * normal(rng);
      lo(i) = -1.0 - std::abs(normal(rng));
      hi(i) = 1.0 + std::abs(normal(rng));
    }
    Eigen::MatrixXd g(2 * n, n);
    g << Eigen::MatrixXd::Identity(n, n), -Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd h(2 * n);
    h << hi, -lo;
    const Eigen::MatrixXd q_lower = q.triangularView<Eigen::Lower>();
    const QuadraticProblem p(sparse(q_lower), c, SpMat(0, n), Eigen::VectorXd(0),
                             sparse(g), h);
    NlpOptions opt;
    opt.kkt_tol = 1e-10;
    const NlpSolution sol = solve(p, std::nullopt, opt);
    ASSERT_EQ(sol.status, NlpStatus::optimal);
    const Eigen::VectorXd ref = brute_force_box_qp(q, c, lo, hi);
    EXPECT_LT((sol.u - ref).cwiseAbs().maxCoeff(), 1e-6) << "trial " << trial;
  }
}

TEST(Ipm, ResidualOfAnalyticPoint) {
  const QuadraticProblem p = bound_example();
  NlpSolution exact;
  exact.u = Eigen::VectorXd::Ones(1);
  exact.s = Eigen::VectorXd::Zero(1);
  exact.lambda = Eigen::VectorXd::Constant(1, 2.0);
  exact.nu = Eigen::VectorXd::Constant(1, 2.0);
  EXPECT_LE(kkt_residual(p, exact), 1e-12);
  NlpSolution moved = exact;
  moved.u(0) += 1e-3;
  moved.s(0) = 0.0;
  EXPECT_GT(kkt_residual(p, moved), 1e-6);
}

TEST(Ipm, InfeasibleProblemIsNotOptimal) {
  // x <= -1 and -x <= -1.
  Eigen::MatrixXd g(2, 1);
  g << 1.0, -1.0;
  const QuadraticProblem p(sparse(Eigen::MatrixXd::Constant(1, 1, 2.0)),
                           Eigen::VectorXd::Zero(1), SpMat(0, 1), Eigen::VectorXd(0),
                           sparse(g), Eigen::VectorXd::Constant(2, -1.0));
  NlpOptions opt;
  opt.max_iter = 100;
  EXPECT_NE(solve(p, std::nullopt, opt).status, NlpStatus::optimal);
}

TEST(Ipm, AcModelDerivativesMatchFiniteDifferences) {
  for (const char* name : {"case9", "case30"}) {
    const GridCase g = opf_test::load_case(name);
    const SetpointLayout layout = SetpointLayout::from(g);
    const AcOpfProblem p =
        build_restoration(g, Setpoints::from_case(g, layout), Weights::training());
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    Eigen::VectorXd x = p.initial_point();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x(i) += u(rng);
    }
    const DerivativeCheck c = check_derivatives(p, x, 17);
    EXPECT_LT(c.max(), 1e-6) << name << " grad " << c.gradient << " je " << c.eq_jacobian
                             << " ji " << c.ineq_jacobian << " h " << c.hessian;
  }
}
